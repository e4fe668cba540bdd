// Copyright (c) 2026 aukit contributors
// SPDX-License-Identifier: Apache-2.0

#include "aukit/num/tensor.hpp"

#include <sstream>

namespace aukit::num {

std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) os << "x";
        os << s[i];
    }
    os << "]";
    return os.str();
}

Tensor::Tensor(std::initializer_list<std::initializer_list<double>> rows) {
    std::size_t r = rows.size();
    std::size_t c = r ? rows.begin()->size() : 0;
    if (r == 0 || c == 0) throw ShapeError("empty initializer for tensor");
    shape_ = {r, c};
    data_.reserve(r * c);
    for (const auto& row : rows) {
        if (row.size() != c) throw ShapeError("ragged initializer rows");
        data_.insert(data_.end(), row.begin(), row.end());
    }
}

}  // namespace aukit::num
