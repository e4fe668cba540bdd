// Copyright (c) 2026 aukit contributors
// SPDX-License-Identifier: Apache-2.0
//
// Single CLI over the toolkit: toy staged training, mixture planning,
// the data-synthesis pipeline, and evaluation. Exit codes: 0 success,
// 1 usage, 2 configuration, 3 runtime. Option precedence, lowest to
// highest: config file, command-line flags, AUKIT_* environment.

#include <concepts>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "aukit/backbone/train.hpp"
#include "aukit/eval/harness.hpp"
#include "aukit/eval/metrics.hpp"
#include "aukit/flux/pipeline.hpp"
#include "aukit/gateway/gateway.hpp"
#include "aukit/mix/mixture.hpp"

using nlohmann::json;

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitConfig = 2;
constexpr int kExitRuntime = 3;

void env_override(std::string& v, const char* name) {
    if (const char* e = std::getenv(name); e && *e) v = e;
}

template <typename T>
    requires std::unsigned_integral<T>
void env_override(T& v, const char* name) {
    if (const char* e = std::getenv(name); e && *e) v = static_cast<T>(std::strtoull(e, nullptr, 10));
}

void write_text(const std::filesystem::path& path, const std::string& text) {
    std::filesystem::create_directories(path.parent_path());
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw aukit::DataError("cannot write " + path.string());
    os << text;
}

std::vector<std::string> read_lines(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw aukit::ConfigError("cannot open " + path.string());
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(is, line)) lines.push_back(line);
    return lines;
}

// ---------------------------------------------------------------- train-demo

struct TrainDemoArgs {
    std::string stage = "joint";
    std::string optimizer = "sgd";
    std::size_t steps = 200;
    std::size_t batch = 4;
    std::size_t budget = 2000;
    std::uint64_t seed = 7;
    double lr = 0.05;
    double lambda = 0.01;
    std::string out = "out/train-demo";
};

aukit::backbone::TrainingStage parse_train_stage(const std::string& s) {
    if (s == "align") return aukit::backbone::TrainingStage::Align;
    if (s == "joint") return aukit::backbone::TrainingStage::JointPretrain;
    if (s == "sft") return aukit::backbone::TrainingStage::SFT;
    throw aukit::ConfigError("train-demo: stage must be align|joint|sft, got '" + s + "'");
}

int cmd_train_demo(TrainDemoArgs a) {
    env_override(a.seed, "AUKIT_SEED");
    env_override(a.out, "AUKIT_OUT");

    namespace bk = aukit::backbone;
    namespace mx = aukit::mix;

    bk::TrainConfig tc;
    tc.stage = parse_train_stage(a.stage);
    if (a.optimizer == "sgd") {
        tc.optimizer = bk::OptimizerKind::Sgd;
    } else if (a.optimizer == "rms") {
        tc.optimizer = bk::OptimizerKind::AdaptiveRms;
    } else {
        throw aukit::ConfigError("train-demo: optimizer must be sgd|rms, got '" + a.optimizer +
                                 "'");
    }
    tc.lr = a.lr;
    tc.lambda = a.lambda;
    tc.validate();
    if (a.steps == 0 || a.batch == 0) {
        throw aukit::ConfigError("train-demo: steps and batch must be positive");
    }

    // The fixed toy stack: small enough for single-core desk runs.
    aukit::moe::AdapterConfig ac;
    ac.d_in = 6;
    ac.d_expert_hidden = 8;
    ac.d_out = 8;
    ac.num_experts = 4;
    ac.top_k = 2;
    ac.aux_weight = a.lambda;
    ac.validate();

    bk::BackboneConfig bc;
    bc.vocab_size = 32;
    bc.d_model = 8;
    bc.n_layers = 1;
    bc.n_heads = 2;
    bc.max_seq_len = 64;
    bc.text_tokens = {0, 24};
    bc.audio_tokens = {24, 32};
    bc.validate();

    aukit::Rng rng(a.seed);
    auto ap = aukit::moe::AdapterParams::init(ac, rng);
    auto bp = bk::BackboneParams::init(bc, rng);
    bk::Trainer trainer(ac, ap, bc, bp, tc);

    mx::SyntheticCorpusOptions co;
    co.n_records = 48;
    co.d_in = ac.d_in;
    auto corpus = mx::make_synthetic_corpus(bc, co, rng);

    mx::MixtureSpec spec;
    switch (tc.stage) {
        case bk::TrainingStage::Align: spec = mx::MixtureSpec::stage1(); break;
        case bk::TrainingStage::JointPretrain: spec = mx::MixtureSpec::stage2(); break;
        case bk::TrainingStage::SFT: spec = mx::MixtureSpec::sft(); break;
    }
    mx::BuildOptions bo;
    bo.interleave_chunk = 4;
    auto plan = mx::plan_epoch(spec, corpus, a.budget, rng, bo);
    if (plan.items.empty()) throw aukit::ConfigError("train-demo: empty epoch plan");

    std::map<std::string, const mx::CorpusRecord*> by_id;
    for (const auto& rec : corpus) by_id[rec.id] = &rec;

    std::ostringstream metrics;
    bk::StepMetrics first{}, last{};
    std::size_t cursor = 0;
    for (std::size_t step = 0; step < a.steps; ++step) {
        bk::SequenceBatch batch;
        for (std::size_t b = 0; b < a.batch; ++b) {
            const auto& item = plan.items[cursor % plan.items.size()];
            ++cursor;
            batch.push_back(
                mx::build_sequence(item.task, *by_id.at(item.record_id), bc, bo));
        }
        auto m = trainer.step(batch);
        metrics << bk::metrics_jsonl(m) << "\n";
        if (step == 0) first = m;
        last = m;
    }

    std::filesystem::path out(a.out);
    write_text(out / "metrics.jsonl", metrics.str());
    trainer.save_checkpoint(out / "checkpoint");

    json summary;
    summary["subcommand"] = "train-demo";
    summary["stage"] = bk::stage_name(tc.stage);
    summary["seed"] = a.seed;
    summary["steps"] = a.steps;
    summary["batch"] = a.batch;
    summary["lambda"] = a.lambda;
    summary["initial"] = {{"total", first.total}, {"l_ntp", first.l_ntp}, {"l_aux", first.l_aux}};
    summary["final"] = {{"total", last.total}, {"l_ntp", last.l_ntp}, {"l_aux", last.l_aux}};
    summary["utilization"] = last.utilization;
    summary["plan_tokens"] = {{"audio", plan.total_audio}, {"text", plan.total_text}};
    write_text(out / "run_summary.json", summary.dump(2) + "\n");

    std::cout << "train-demo: " << bk::stage_name(tc.stage) << ", " << a.steps << " steps\n"
              << "  L_NTP " << first.l_ntp << " -> " << last.l_ntp << "\n"
              << "  summary: " << (out / "run_summary.json").string() << "\n";
    return 0;
}

// ------------------------------------------------------------------ mix-plan

struct MixPlanArgs {
    std::string stage = "1";
    std::string spec_file;
    std::size_t draws = 100000;
    std::size_t budget = 0;
    std::uint64_t seed = 42;
    std::string out = "out/mix-plan";
};

aukit::mix::MixtureSpec parse_mix_stage(const std::string& s) {
    using aukit::mix::MixtureSpec;
    if (s == "1" || s == "stage1") return MixtureSpec::stage1();
    if (s == "2" || s == "stage2") return MixtureSpec::stage2();
    if (s == "sft") return MixtureSpec::sft();
    throw aukit::ConfigError("mix-plan: stage must be 1|2|sft, got '" + s + "'");
}

int cmd_mix_plan(MixPlanArgs a) {
    env_override(a.seed, "AUKIT_SEED");
    env_override(a.out, "AUKIT_OUT");

    namespace mx = aukit::mix;
    mx::MixtureSpec spec =
        a.spec_file.empty() ? parse_mix_stage(a.stage) : mx::MixtureSpec::load(a.spec_file);
    spec.validate();
    if (a.draws == 0) throw aukit::ConfigError("mix-plan: draws must be positive");

    aukit::Rng rng(a.seed);
    std::map<std::string, std::size_t> task_counts;
    std::map<std::string, std::size_t> category_counts;
    for (std::size_t i = 0; i < a.draws; ++i) {
        auto t = mx::sample_task(spec, rng);
        ++task_counts[mx::task_name(t)];
        ++category_counts[mx::category_name(mx::category_of(t))];
    }

    json freq = json::object();
    for (const auto& [name, count] : category_counts) {
        freq[name] = static_cast<double>(count) / static_cast<double>(a.draws);
    }
    json expected = json::object();
    for (const auto& [cat, w] : spec.category_weights()) {
        if (w > 0) expected[mx::category_name(cat)] = w;
    }

    std::filesystem::path out(a.out);
    json summary;
    summary["subcommand"] = "mix-plan";
    summary["stage"] = mx::stage_label(spec.stage);
    summary["seed"] = a.seed;
    summary["draws"] = a.draws;
    summary["expected"] = expected;
    summary["observed"] = freq;
    summary["task_counts"] = task_counts;

    if (a.budget > 0) {
        aukit::backbone::BackboneConfig bc;
        bc.vocab_size = 32;
        bc.d_model = 8;
        bc.n_layers = 1;
        bc.n_heads = 2;
        bc.max_seq_len = 64;
        bc.text_tokens = {0, 24};
        bc.audio_tokens = {24, 32};
        mx::SyntheticCorpusOptions co;
        co.d_in = 6;
        auto corpus = mx::make_synthetic_corpus(bc, co, rng);
        auto plan = mx::plan_epoch(spec, corpus, a.budget, rng);
        plan.save_jsonl(out / "plan.jsonl");
        summary["plan"] = {{"items", plan.items.size()},
                           {"audio_tokens", plan.total_audio},
                           {"text_tokens", plan.total_text}};
    }
    write_text(out / "run_summary.json", summary.dump(2) + "\n");

    std::cout << "mix-plan: stage " << mx::stage_label(spec.stage) << ", " << a.draws
              << " draws\n";
    for (const auto& [name, count] : category_counts) {
        std::cout << "  " << name << ": "
                  << static_cast<double>(count) / static_cast<double>(a.draws) << "\n";
    }
    std::cout << "  summary: " << (out / "run_summary.json").string() << "\n";
    return 0;
}

// ------------------------------------------------------------------ dataflux

struct FluxArgs {
    std::string input;
    std::string endpoints;
    std::string steps = "1,2,3";
    std::string data = "data";
    std::string out = "out/dataflux";
    std::size_t parallelism = 1;
    std::size_t retries = 2;
    bool strict = false;
};

std::vector<int> parse_steps(const std::string& s) {
    std::vector<int> steps;
    std::stringstream ss(s);
    std::string part;
    while (std::getline(ss, part, ',')) {
        if (part.empty()) continue;
        if (part.size() != 1 || part[0] < '1' || part[0] > '3') {
            throw aukit::ConfigError("dataflux: steps must be a comma list of 1-3, got '" + s +
                                     "'");
        }
        steps.push_back(part[0] - '0');
    }
    if (steps.empty()) throw aukit::ConfigError("dataflux: no steps requested");
    return steps;
}

std::vector<aukit::flux::FluxRecord> load_manifest(const std::filesystem::path& path) {
    std::vector<aukit::flux::FluxRecord> records;
    std::size_t lineno = 0;
    for (const auto& line : read_lines(path)) {
        ++lineno;
        if (line.empty()) continue;
        json j;
        try {
            j = json::parse(line);
            aukit::flux::FluxRecord rec;
            rec.id = j.at("id").get<std::string>();
            rec.taxonomy_path = j.at("taxonomy_path").get<std::string>();
            rec.audio_ref = j.value("audio", "");
            rec.audio_base64 = j.value("audio_base64", "");
            rec.audio_media_type = j.value("media_type", "audio/wav");
            rec.caption = j.value("caption", "");
            if (rec.audio_ref.empty() && rec.audio_base64.empty()) {
                throw aukit::DataError("manifest record " + rec.id + " has no audio");
            }
            records.push_back(std::move(rec));
        } catch (const json::exception& e) {
            throw aukit::DataError(path.string() + ":" + std::to_string(lineno) + ": " +
                                   e.what());
        }
    }
    if (records.empty()) throw aukit::DataError("manifest " + path.string() + " is empty");
    return records;
}

int cmd_dataflux(FluxArgs a) {
    env_override(a.out, "AUKIT_OUT");
    env_override(a.parallelism, "AUKIT_PARALLELISM");
    env_override(a.data, "AUKIT_DATA_DIR");
    env_override(a.endpoints, "AUKIT_ENDPOINTS");
    if (a.input.empty()) throw aukit::ConfigError("dataflux: --input is required");
    if (a.endpoints.empty()) throw aukit::ConfigError("dataflux: --endpoints is required");
    if (a.parallelism == 0) throw aukit::ConfigError("dataflux: parallelism must be >= 1");

    namespace fx = aukit::flux;
    auto ctx = fx::load_flux_assets(a.data);
    ctx.endpoints = aukit::gateway::load_endpoints(a.endpoints);
    auto transport = std::make_shared<aukit::gateway::HttpTransport>();
    aukit::gateway::Gateway gw(transport);
    ctx.gw = &gw;

    auto corpus = load_manifest(a.input);

    fx::PipelineConfig cfg;
    cfg.out_dir = a.out;
    cfg.parallelism = a.parallelism;
    cfg.strict_match = a.strict;
    cfg.parse_retries = a.retries;
    cfg.steps = parse_steps(a.steps);

    auto sum = fx::run_pipeline(corpus, ctx, cfg);

    json discarded = json::object();
    for (const auto& [reason, n] : sum.discarded_by_reason) discarded[reason] = n;
    json summary;
    summary["subcommand"] = "dataflux";
    summary["input"] = sum.input;
    summary["kept"] = sum.kept;
    summary["parked"] = sum.parked;
    summary["discarded"] = discarded;
    summary["reconciles"] = sum.reconciles();
    write_text(std::filesystem::path(a.out) / "run_summary.json", summary.dump(2) + "\n");

    std::cout << "dataflux: " << sum.input << " in, " << sum.kept << " kept, "
              << sum.discarded() << " discarded, " << sum.parked << " parked\n";
    for (const auto& [reason, n] : sum.discarded_by_reason) {
        std::cout << "  discarded (" << reason << "): " << n << "\n";
    }
    std::cout << "  store: " << a.out << "\n";
    return 0;
}

// ---------------------------------------------------------------------- eval

struct RateArgs {
    std::string ref;
    std::string hyp;
    std::string out;
    bool keep_case = false;
    bool keep_punctuation = false;
    bool keep_whitespace = false;
};

int cmd_eval_rate(bool char_level, RateArgs a) {
    env_override(a.out, "AUKIT_OUT");
    if (a.ref.empty() || a.hyp.empty()) {
        throw aukit::ConfigError("eval: --ref and --hyp are required");
    }
    auto refs = read_lines(a.ref);
    auto hyps = read_lines(a.hyp);
    if (refs.size() != hyps.size()) {
        throw aukit::DataError("eval: " + std::to_string(refs.size()) + " reference lines vs " +
                               std::to_string(hyps.size()) + " hypothesis lines");
    }

    aukit::eval::TextNormalization norm;
    norm.lowercase = !a.keep_case;
    norm.strip_punctuation = !a.keep_punctuation;
    norm.cer_remove_whitespace = !a.keep_whitespace;

    aukit::eval::EditOps total;
    std::ostringstream per_line;
    for (std::size_t i = 0; i < refs.size(); ++i) {
        auto ops = char_level ? aukit::eval::cer(refs[i], hyps[i], norm)
                              : aukit::eval::wer(refs[i], hyps[i], norm);
        total.substitutions += ops.substitutions;
        total.insertions += ops.insertions;
        total.deletions += ops.deletions;
        total.ref_len += ops.ref_len;
        per_line << json{{"line", i + 1},
                         {"substitutions", ops.substitutions},
                         {"insertions", ops.insertions},
                         {"deletions", ops.deletions},
                         {"ref_len", ops.ref_len},
                         {"rate", ops.rate()}}
                        .dump()
                 << "\n";
    }
    total.empty_reference = (total.ref_len == 0);

    const char* metric = char_level ? "cer" : "wer";
    std::cout << metric << ": " << total.rate() << " (S=" << total.substitutions
              << " I=" << total.insertions << " D=" << total.deletions << " / N=" << total.ref_len
              << ")\n";

    if (!a.out.empty()) {
        std::filesystem::path out(a.out);
        write_text(out / "per_line.jsonl", per_line.str());
        json summary;
        summary["subcommand"] = std::string("eval-") + metric;
        summary["lines"] = refs.size();
        summary["substitutions"] = total.substitutions;
        summary["insertions"] = total.insertions;
        summary["deletions"] = total.deletions;
        summary["ref_len"] = total.ref_len;
        summary["rate"] = total.rate();
        write_text(out / "run_summary.json", summary.dump(2) + "\n");
        std::cout << "  summary: " << (out / "run_summary.json").string() << "\n";
    }
    return 0;
}

struct QaArgs {
    std::string items;
    std::string endpoints;
    std::string data = "data";
    std::string out = "out/caption-qa";
    std::size_t parallelism = 4;
};

int cmd_caption_qa(QaArgs a) {
    env_override(a.out, "AUKIT_OUT");
    env_override(a.parallelism, "AUKIT_PARALLELISM");
    env_override(a.data, "AUKIT_DATA_DIR");
    env_override(a.endpoints, "AUKIT_ENDPOINTS");
    if (a.items.empty()) throw aukit::ConfigError("eval caption-qa: --items is required");
    if (a.endpoints.empty()) {
        throw aukit::ConfigError("eval caption-qa: --endpoints is required");
    }

    namespace ev = aukit::eval;
    auto h = ev::QAHarness::load(a.data);
    auto eps = aukit::gateway::load_endpoints(a.endpoints);
    auto find = [&](aukit::gateway::Role role) {
        auto it = eps.find(role);
        if (it == eps.end()) {
            throw aukit::ConfigError(std::string("eval caption-qa: endpoints file lacks role ") +
                                     aukit::gateway::role_name(role));
        }
        return it->second;
    };
    h.captioner = find(aukit::gateway::Role::Captioner);
    h.qa_reader = find(aukit::gateway::Role::QAReader);
    auto transport = std::make_shared<aukit::gateway::HttpTransport>();
    aukit::gateway::Gateway gw(transport);
    h.gw = &gw;

    auto items = ev::load_items(a.items);
    auto outcomes = ev::caption_then_answer_many(items, h, a.parallelism);

    std::filesystem::path out(a.out);
    std::filesystem::create_directories(out);
    ev::save_outcomes(out / "outcomes.jsonl", outcomes);
    auto report = ev::score_set(items, outcomes);
    write_text(out / "report.json", report.to_json() + "\n");

    json summary;
    summary["subcommand"] = "eval-caption-qa";
    summary["items"] = report.total;
    summary["correct"] = report.correct;
    summary["unextracted"] = report.unextracted;
    summary["errored"] = report.errored;
    summary["accuracy"] = report.accuracy;
    write_text(out / "run_summary.json", summary.dump(2) + "\n");

    std::cout << report.to_table() << "  outcomes: " << (out / "outcomes.jsonl").string()
              << "\n";
    return 0;
}

// ---------------------------------------------------------------------- main

int guarded(int (*fn)(void*), void* args) {
    try {
        return fn(args);
    } catch (const aukit::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const aukit::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitRuntime;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitRuntime;
    }
}

template <typename Args>
int dispatch(int (*cmd)(Args), Args& args) {
    struct Pack {
        int (*cmd)(Args);
        Args* args;
    } pack{cmd, &args};
    return guarded(
        [](void* p) {
            auto* pk = static_cast<Pack*>(p);
            return pk->cmd(*pk->args);
        },
        &pack);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"aukit: desk-scale audio-text adapter toolkit"};
    app.require_subcommand(1);
    app.set_config("--config", "", "INI config file (lowest precedence)");
    app.footer(
        "Option precedence: config file < flags < environment.\n"
        "Environment: AUKIT_SEED, AUKIT_OUT, AUKIT_PARALLELISM, AUKIT_DATA_DIR,\n"
        "AUKIT_ENDPOINTS override the matching flags where applicable.");

    TrainDemoArgs train_args;
    auto* train = app.add_subcommand("train-demo", "Staged toy training run");
    train->add_option("--stage", train_args.stage, "align|joint|sft")->capture_default_str();
    train->add_option("--optimizer", train_args.optimizer, "sgd|rms")->capture_default_str();
    train->add_option("--steps", train_args.steps, "Optimizer steps")->capture_default_str();
    train->add_option("--batch", train_args.batch, "Sequences per step")->capture_default_str();
    train->add_option("--budget", train_args.budget, "Epoch plan token budget")
        ->capture_default_str();
    train->add_option("--seed", train_args.seed, "RNG seed (env AUKIT_SEED)")
        ->capture_default_str();
    train->add_option("--lr", train_args.lr, "Learning rate")->capture_default_str();
    train->add_option("--lambda", train_args.lambda, "Aux-loss weight")->capture_default_str();
    train->add_option("--out", train_args.out, "Output directory (env AUKIT_OUT)")
        ->capture_default_str();

    MixPlanArgs mix_args;
    auto* mix = app.add_subcommand("mix-plan", "Sample a staged data mixture");
    mix->add_option("--stage", mix_args.stage, "1|2|sft")->capture_default_str();
    mix->add_option("--spec", mix_args.spec_file, "Mixture spec file (overrides --stage)");
    mix->add_option("--draws", mix_args.draws, "Number of task draws")->capture_default_str();
    mix->add_option("--budget", mix_args.budget, "Also plan an epoch of this many tokens")
        ->capture_default_str();
    mix->add_option("--seed", mix_args.seed, "RNG seed (env AUKIT_SEED)")->capture_default_str();
    mix->add_option("--out", mix_args.out, "Output directory (env AUKIT_OUT)")
        ->capture_default_str();

    FluxArgs flux_args;
    auto* flux = app.add_subcommand("dataflux", "Instruction-data synthesis pipeline");
    auto* flux_run = flux->add_subcommand("run", "Run steps over a manifest");
    flux_run->add_option("--input", flux_args.input, "Input manifest JSONL");
    flux_run->add_option("--endpoints", flux_args.endpoints,
                         "Endpoint config JSON (env AUKIT_ENDPOINTS)");
    flux_run->add_option("--steps", flux_args.steps, "Comma list of steps to run")
        ->capture_default_str();
    flux_run->add_option("--parallelism", flux_args.parallelism,
                         "Concurrent records (env AUKIT_PARALLELISM)")
        ->capture_default_str();
    flux_run->add_option("--data", flux_args.data, "Prompt/taxonomy directory (env AUKIT_DATA_DIR)")
        ->capture_default_str();
    flux_run->add_option("--retries", flux_args.retries, "Parse retries per model reply")
        ->capture_default_str();
    flux_run->add_flag("--strict", flux_args.strict, "Keep STRONG_MATCH verdicts only");
    flux_run->add_option("--out", flux_args.out, "Store directory (env AUKIT_OUT)")
        ->capture_default_str();

    RateArgs wer_args, cer_args;
    QaArgs qa_args;
    auto* eval = app.add_subcommand("eval", "Evaluation metrics and harness");
    auto* werc = eval->add_subcommand("wer", "Word error rate over paired line files");
    werc->add_option("--ref", wer_args.ref, "Reference text file");
    werc->add_option("--hyp", wer_args.hyp, "Hypothesis text file");
    werc->add_option("--out", wer_args.out, "Optional output directory (env AUKIT_OUT)");
    werc->add_flag("--keep-case", wer_args.keep_case, "Skip lowercasing");
    werc->add_flag("--keep-punctuation", wer_args.keep_punctuation, "Skip punctuation strip");
    auto* cerc = eval->add_subcommand("cer", "Character error rate over paired line files");
    cerc->add_option("--ref", cer_args.ref, "Reference text file");
    cerc->add_option("--hyp", cer_args.hyp, "Hypothesis text file");
    cerc->add_option("--out", cer_args.out, "Optional output directory (env AUKIT_OUT)");
    cerc->add_flag("--keep-case", cer_args.keep_case, "Skip lowercasing");
    cerc->add_flag("--keep-punctuation", cer_args.keep_punctuation, "Skip punctuation strip");
    cerc->add_flag("--keep-whitespace", cer_args.keep_whitespace, "Keep whitespace tokens");
    auto* qac = eval->add_subcommand("caption-qa", "Caption-conditioned QA accuracy");
    qac->add_option("--items", qa_args.items, "Items JSONL file");
    qac->add_option("--endpoints", qa_args.endpoints,
                    "Endpoint config JSON (env AUKIT_ENDPOINTS)");
    qac->add_option("--data", qa_args.data, "Prompt directory (env AUKIT_DATA_DIR)")
        ->capture_default_str();
    qac->add_option("--parallelism", qa_args.parallelism, "Concurrent items (env AUKIT_PARALLELISM)")
        ->capture_default_str();
    qac->add_option("--out", qa_args.out, "Output directory (env AUKIT_OUT)")
        ->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int rc = app.exit(e);
        return rc == 0 ? 0 : kExitUsage;
    }

    if (train->parsed()) return dispatch(cmd_train_demo, train_args);
    if (mix->parsed()) return dispatch(cmd_mix_plan, mix_args);
    if (flux->parsed()) {
        if (!flux_run->parsed()) {
            std::cerr << "usage: aukit dataflux run --input ... --endpoints ...\n";
            return kExitUsage;
        }
        return dispatch(cmd_dataflux, flux_args);
    }
    if (eval->parsed()) {
        if (werc->parsed()) {
            struct Shim {
                static int run(RateArgs a) { return cmd_eval_rate(false, std::move(a)); }
            };
            return dispatch(Shim::run, wer_args);
        }
        if (cerc->parsed()) {
            struct Shim {
                static int run(RateArgs a) { return cmd_eval_rate(true, std::move(a)); }
            };
            return dispatch(Shim::run, cer_args);
        }
        if (qac->parsed()) return dispatch(cmd_caption_qa, qa_args);
        std::cerr << "usage: aukit eval wer|cer|caption-qa ...\n";
        return kExitUsage;
    }
    return kExitUsage;
}
