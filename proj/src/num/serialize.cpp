// Copyright (c) 2026 aukit contributors
// SPDX-License-Identifier: Apache-2.0

#include "aukit/num/serialize.hpp"

#include <bit>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace aukit::num {

namespace {

constexpr char kMagic[4] = {'A', 'U', 'K', 'T'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    os.write(reinterpret_cast<const char*>(b), 4);
}

void put_u64(std::ostream& os, std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    os.write(reinterpret_cast<const char*>(b), 8);
}

void put_f64(std::ostream& os, double d) {
    put_u64(os, std::bit_cast<std::uint64_t>(d));
}

std::uint32_t get_u32(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
    return v;
}

std::uint64_t get_u64(std::istream& is) {
    unsigned char b[8];
    is.read(reinterpret_cast<char*>(b), 8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
}

double get_f64(std::istream& is) { return std::bit_cast<double>(get_u64(is)); }

[[noreturn]] void corrupt(const std::filesystem::path& path, const std::string& why) {
    throw DataError("tensor file " + path.string() + ": " + why);
}

}  // namespace

void save_tensor(const std::filesystem::path& path, const Tensor& t) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw DataError("cannot open " + path.string() + " for writing");
    os.write(kMagic, 4);
    put_u32(os, kVersion);
    put_u32(os, static_cast<std::uint32_t>(t.ndim()));
    for (std::size_t d : t.shape()) put_u64(os, d);
    for (double v : t.flat()) put_f64(os, v);
    if (!os) throw DataError("write failed for " + path.string());
}

Tensor load_tensor(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot open " + path.string());
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, kMagic, 4) != 0) corrupt(path, "bad magic");
    std::uint32_t version = get_u32(is);
    if (version != kVersion) corrupt(path, "unsupported version " + std::to_string(version));
    std::uint32_t ndim = get_u32(is);
    if (!is || ndim == 0 || ndim > 8) corrupt(path, "implausible rank");
    Shape shape(ndim);
    for (auto& d : shape) d = get_u64(is);
    if (!is) corrupt(path, "truncated header");
    std::size_t n = Tensor::element_count(shape);
    std::vector<double> data(n);
    for (auto& v : data) v = get_f64(is);
    if (!is) corrupt(path, "truncated data");
    return Tensor(std::move(shape), std::move(data));
}

void save_tensor_text(const std::filesystem::path& path, const Tensor& t) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw DataError("cannot open " + path.string() + " for writing");
    for (std::size_t i = 0; i < t.ndim(); ++i) os << (i ? " " : "") << t.dim(i);
    os << "\n";
    char buf[64];
    for (double v : t.flat()) {
        std::snprintf(buf, sizeof buf, "%.17g", v);
        os << buf << "\n";
    }
    if (!os) throw DataError("write failed for " + path.string());
}

Tensor load_tensor_text(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw DataError("cannot open " + path.string());
    std::string header;
    if (!std::getline(is, header)) corrupt(path, "missing shape line");
    std::istringstream hs(header);
    Shape shape;
    std::size_t d;
    while (hs >> d) shape.push_back(d);
    if (shape.empty()) corrupt(path, "empty shape line");
    std::size_t n = Tensor::element_count(shape);
    std::vector<double> data;
    data.reserve(n);
    double v;
    while (is >> v) data.push_back(v);
    if (data.size() != n) {
        corrupt(path, "expected " + std::to_string(n) + " elements, found " +
                      std::to_string(data.size()));
    }
    return Tensor(std::move(shape), std::move(data));
}

void save_checkpoint(const std::filesystem::path& dir,
                     const std::map<std::string, Tensor>& params) {
    std::filesystem::create_directories(dir);
    nlohmann::json manifest;
    manifest["format"] = "aukit-checkpoint";
    manifest["version"] = 1;
    auto& entries = manifest["tensors"];
    entries = nlohmann::json::array();
    std::size_t i = 0;
    for (const auto& [name, t] : params) {
        std::string file = "t" + std::to_string(i++) + ".bin";
        save_tensor(dir / file, t);
        entries.push_back({{"name", name}, {"file", file}, {"shape", t.shape()}});
    }
    std::ofstream os(dir / "manifest.json", std::ios::trunc);
    if (!os) throw DataError("cannot write manifest in " + dir.string());
    os << manifest.dump(2) << "\n";
}

std::map<std::string, Tensor> load_checkpoint(const std::filesystem::path& dir) {
    std::ifstream is(dir / "manifest.json");
    if (!is) throw DataError("no manifest.json in " + dir.string());
    nlohmann::json manifest;
    try {
        is >> manifest;
    } catch (const nlohmann::json::exception& e) {
        throw DataError("unparsable manifest in " + dir.string() + ": " + e.what());
    }
    if (manifest.value("format", "") != "aukit-checkpoint") {
        throw DataError("not a checkpoint manifest: " + dir.string());
    }
    std::map<std::string, Tensor> out;
    for (const auto& entry : manifest.at("tensors")) {
        auto name = entry.at("name").get<std::string>();
        auto file = entry.at("file").get<std::string>();
        auto shape = entry.at("shape").get<Shape>();
        Tensor t = load_tensor(dir / file);
        if (t.shape() != shape) {
            throw DataError("checkpoint tensor " + name + " has shape " + shape_str(t.shape()) +
                            ", manifest says " + shape_str(shape));
        }
        if (!out.emplace(name, std::move(t)).second) {
            throw DataError("duplicate tensor name in manifest: " + name);
        }
    }
    return out;
}

}  // namespace aukit::num
