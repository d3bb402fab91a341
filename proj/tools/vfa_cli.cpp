// vfa: synthesize datasets, train, evaluate, export embeddings, run the
// self-checks and ablation sweeps.
//
// Exit codes: 0 ok, 2 config, 3 I/O, 4 training abort, 5 dimension mismatch,
// 6 check failure.

#include "vfa/checkpoint.hpp"
#include "vfa/checks.hpp"
#include "vfa/config.hpp"
#include "vfa/dataset_io.hpp"
#include "vfa/eval.hpp"
#include "vfa/synthdata.hpp"
#include "vfa/trainer.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#ifndef VFA_VERSION
#define VFA_VERSION "0.0.0"
#endif

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using namespace vfa;

namespace {

enum Exit : int { kOk = 0, kConfig = 2, kIo = 3, kAbort = 4, kMismatch = 5, kCheckFailed = 6 };

struct CheckFailed : std::runtime_error {
    using std::runtime_error::runtime_error;
};

std::string utc_stamp(const char* fmt) {
    const auto now = std::chrono::system_clock::now();
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[64];
    std::strftime(buf, sizeof buf, fmt, &tm);
    return buf;
}

std::string iso_now() { return utc_stamp("%Y-%m-%dT%H:%M:%SZ"); }

std::string default_run_dir(std::uint64_t seed) {
    return (fs::path("runs") / (utc_stamp("%Y%m%dT%H%M%SZ") + "-seed" + std::to_string(seed))).string();
}

/// --seed wins, then VFA_SEED, then the config value.
std::optional<std::uint64_t> env_seed() {
    const char* v = std::getenv("VFA_SEED");
    if (!v || !*v) return std::nullopt;
    return detail::to_uint("VFA_SEED", v);
}

unsigned env_threads(unsigned fallback) {
    const char* v = std::getenv("VFA_THREADS");
    if (!v || !*v) return fallback;
    const auto n = detail::to_uint("VFA_THREADS", v);
    if (n < 1) throw ConfigError("VFA_THREADS: must be >= 1");
    return static_cast<unsigned>(n);
}

RunConfig resolve_config(const std::string& path) { return path.empty() ? RunConfig{} : load_config(path); }

void ensure_parent(const fs::path& file) {
    const auto dir = file.parent_path();
    if (dir.empty()) return;
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create directory '" + dir.string() + "': " + ec.message());
}

void write_text(const fs::path& path, const std::string& text) {
    ensure_parent(path);
    std::ofstream os(path, std::ios::trunc | std::ios::binary);
    if (!os) throw IoError("cannot write '" + path.string() + "'");
    os << text;
    if (!os) throw IoError("write failed for '" + path.string() + "'");
}

json read_json(const fs::path& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open '" + path.string() + "'");
    try {
        return json::parse(is);
    } catch (const json::exception& e) {
        throw IoError(path.string() + ": " + e.what());
    }
}

/// Manifest shared by every command. `args` holds exactly what replay needs.
struct Manifest {
    std::string command;
    json args = json::object();
    std::string config_text;
    std::uint64_t seed = 0;
    json artifacts = json::object();
    json extra = json::object();
    std::string started = iso_now();

    void write(const fs::path& path) const {
        for (const auto& [name, p] : artifacts.items())
            if (!fs::exists(p.get<std::string>()))
                throw IoError("manifest artifact '" + name + "' missing: " + p.get<std::string>());
        json j;
        j["tool"] = "vfa";
        j["version"] = VFA_VERSION;
        j["command"] = command;
        j["args"] = args;
        j["seed"] = seed;
        j["config"] = config_text;
        j["artifacts"] = artifacts;
        j["extra"] = extra;
        j["started"] = started;
        j["finished"] = iso_now();
        write_text(path, j.dump(2) + "\n");
    }
};

std::string argv_line(int argc, char** argv) {
    std::string out;
    for (int i = 0; i < argc; ++i) out += (i ? " " : "") + std::string(argv[i]);
    return out;
}

// ---------------------------------------------------------------- synth

struct SynthArgs {
    std::string out;
    bool text = false;
};

int run_synth(RunConfig cfg, SynthArgs a, const std::string& invocation) {
    validate(cfg.synth);
    if (a.out.empty()) a.out = (fs::path(default_run_dir(cfg.synth.seed)) / "dataset.bin").string();
    const auto ds = generate(cfg.synth);
    ensure_parent(a.out);
    save_dataset(a.out, ds, a.text);

    Manifest m;
    m.command = "synth";
    m.args = {{"out", a.out}, {"text", a.text}};
    m.config_text = to_text(cfg);
    m.seed = cfg.synth.seed;
    m.artifacts = {{"dataset", a.out}};
    m.extra = {{"invocation", invocation},
               {"identities", ds.identities.size()},
               {"latent_dim", ds.latent_dim},
               {"input_dim", ds.input_dim}};
    const auto manifest_path = a.out + ".manifest.json";
    m.write(manifest_path);
    std::cout << "dataset: " << a.out << " (M=" << ds.identities.size() << ", L=" << ds.latent_dim
              << ", d_in=" << ds.input_dim << ")\nmanifest: " << manifest_path << "\n";
    return kOk;
}

// ---------------------------------------------------------------- train

struct TrainArgs {
    std::string dataset;
    std::string out_dir;
    bool no_explicit = false;
    bool no_implicit = false;
    bool no_reweight = false;
    std::optional<double> r_keep;
};

SyntheticDataset load_valid_dataset(const std::string& path) {
    auto ds = load_dataset(path);
    const auto report = validate_dataset(ds);
    if (!report.ok()) throw IoError(path + ": dataset failed validation: " + report.summary());
    return ds;
}

json trace_json(const TraceRecord& r) {
    return {{"stage", r.stage},
            {"t", r.t},
            {"loss_total", r.loss_total},
            {"loss_implicit", r.loss_implicit},
            {"loss_explicit", r.loss_explicit},
            {"lr", r.lr},
            {"nonzero_weight_count", r.nonzero_weight_count}};
}

void apply_ablations(TrainConfig& t, const TrainArgs& a) {
    if (a.no_explicit) t.disable_explicit = true;
    if (a.no_implicit) t.disable_implicit = true;
    if (a.no_reweight) t.disable_reweighting = true;
    if (a.r_keep) t.R_keep = *a.r_keep;
}

int run_train(RunConfig cfg, TrainArgs a, const std::string& invocation) {
    apply_ablations(cfg.train, a);
    validate(cfg);
    const auto ds = load_valid_dataset(a.dataset);
    if (a.out_dir.empty()) a.out_dir = default_run_dir(cfg.train.seed);
    const fs::path dir(a.out_dir);
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create '" + dir.string() + "': " + ec.message());

    const auto metrics_path = dir / "metrics.jsonl";
    std::ofstream metrics(metrics_path, std::ios::trunc | std::ios::binary);
    if (!metrics) throw IoError("cannot write '" + metrics_path.string() + "'");
    std::optional<TraceRecord> last;
    const IterationHook hook = [&](const TraceRecord& r) {
        metrics << trace_json(r).dump() << '\n';
        last = r;
    };

    TrainedModel model;
    try {
        model = train(cfg.train, ds, hook);
    } catch (const TrainingAbort& e) {
        metrics.flush();
        std::cerr << "training aborted: " << e.what() << "\n";
        if (last)
            std::cerr << "last completed iteration: " << trace_json(*last).dump() << "\n";
        std::cerr << "partial metrics: " << metrics_path.string() << "\n";
        return kAbort;
    }
    metrics.close();
    if (!metrics) throw IoError("write failed for '" + metrics_path.string() + "'");

    Manifest m;
    m.command = "train";
    m.args = {{"dataset", a.dataset}, {"out_dir", a.out_dir}};
    m.config_text = to_text(cfg);
    m.seed = cfg.train.seed;

    const auto best = dir / "checkpoint_best.bin";
    const auto last_ck = dir / "checkpoint_last.bin";
    save_checkpoint(best.string(), model.params, model.best_iteration, cfg.train.seed);
    save_checkpoint(last_ck.string(), model.last_params, model.stage3_iterations, cfg.train.seed);

    std::string val;
    for (const auto& v : model.validation) val += json{{"t", v.t}, {"accuracy", v.accuracy}}.dump() + "\n";
    const auto val_path = dir / "validation.jsonl";
    write_text(val_path, val);

    json weights;
    weights["identity_ids"] = model.label_to_id;
    weights["s"] = model.weights.s;
    weights["H"] = model.weights.H;
    weights["excluded_identity_ids"] = model.excluded_identity_ids();
    const auto weights_path = dir / "weights.json";
    write_text(weights_path, weights.dump(2) + "\n");

    m.artifacts = {{"dataset", a.dataset},
                   {"checkpoint_best", best.string()},
                   {"checkpoint_last", last_ck.string()},
                   {"metrics", metrics_path.string()},
                   {"validation", val_path.string()},
                   {"weights", weights_path.string()}};
    if (!model.stage2_skipped) {
        std::string hist;
        for (const auto& r : model.weight_history)
            hist += json{{"iteration", r.iteration},
                         {"event", r.event},
                         {"promoted", r.promoted},
                         {"checksum", r.checksum},
                         {"nonzero", r.nonzero}}
                        .dump() +
                    "\n";
        const auto hist_path = dir / "weight_history.jsonl";
        write_text(hist_path, hist);
        m.artifacts["weight_history"] = hist_path.string();
    }
    const auto m_train = model.label_to_id.size();
    m.extra = {{"invocation", invocation},
               {"stage2_skipped", model.stage2_skipped},
               {"train_identities", m_train},
               {"r_keep", cfg.train.R_keep},
               {"stop_threshold", cfg.train.R_keep * static_cast<double>(m_train)},
               {"stage_iterations", {model.stage1_iterations, model.stage2_iterations, model.stage3_iterations}},
               {"weight_updates", model.weights.updates_applied},
               {"best_iteration", model.best_iteration},
               {"best_validation_accuracy", model.best_validation}};
    m.write(dir / "manifest.json");
    std::cout << "run directory: " << dir.string() << "\nbest validation V-F 1:2 ACC " << model.best_validation
              << " at stage-3 iteration " << model.best_iteration << "\n"
              << (model.stage2_skipped ? "stage 2 skipped\n" : "")
              << "excluded identities: " << model.excluded_identity_ids().size() << "\n";
    return kOk;
}

// ---------------------------------------------------------------- eval

struct EvalArgs {
    std::string checkpoint;
    std::string dataset;
    std::string split = "test";
    std::string out;
    bool check_dims = false;  // compare checkpoint against train.hidden / train.embed
    unsigned threads = 1;
};

void require_config_dims(const RunConfig& cfg, const EncoderParams& p) {
    const auto d = p.dims();
    if (d.embed != cfg.train.embed || d.hidden != cfg.train.hidden)
        throw DimensionMismatch("checkpoint has H=" + std::to_string(d.hidden) + ", D=" + std::to_string(d.embed) +
                                " but the config specifies H=" + std::to_string(cfg.train.hidden) +
                                ", D=" + std::to_string(cfg.train.embed));
}

int run_eval(RunConfig cfg, EvalArgs a, const std::string& invocation) {
    validate(cfg);
    const Split split = parse_split(a.split);
    const auto ck = load_checkpoint(a.checkpoint);
    const auto ds = load_valid_dataset(a.dataset);
    if (a.check_dims) require_config_dims(cfg, ck.params);
    require_compatible(ck.params, ds);
    if (a.out.empty()) a.out = (fs::path(default_run_dir(cfg.eval.seed)) / ("report_" + a.split + ".json")).string();

    EvalConfig ec = cfg.eval;
    ec.threads = a.threads;
    const auto report = evaluate_all(ck.params, ds, split, ec);
    write_text(a.out, report.to_json().dump(2) + "\n");

    Manifest m;
    m.command = "eval";
    m.args = {{"checkpoint", a.checkpoint},
              {"dataset", a.dataset},
              {"split", a.split},
              {"out", a.out},
              {"check_dims", a.check_dims},
              {"threads", a.threads}};
    m.config_text = to_text(cfg);
    m.seed = cfg.eval.seed;
    m.artifacts = {{"checkpoint", a.checkpoint}, {"dataset", a.dataset}, {"report", a.out}};
    const fs::path out(a.out);
    for (const auto& [key, curve] : report.curves) {
        std::string tag = key;
        std::replace(tag.begin(), tag.end(), '/', '_');
        const auto p = out.parent_path() / (out.stem().string() + ".curve_" + tag + ".csv");
        write_text(p, curve_csv(curve));
        m.artifacts["curve_" + tag] = p.string();
    }
    m.extra = {{"invocation", invocation}};
    m.write(a.out + ".manifest.json");

    for (const auto& [key, cell] : report.cells) {
        std::cout << key << ": ";
        if (cell.value) {
            std::cout << *cell.value;
        } else {
            std::cout << "n/a (" << cell.note << ")";
        }
        std::cout << "\n";
    }
    std::cout << "report: " << a.out << "\n";
    return kOk;
}

// ---------------------------------------------------------------- export

struct ExportArgs {
    std::string checkpoint;
    std::string dataset;
    std::string split = "test";
    std::string out;
};

int run_export(RunConfig cfg, ExportArgs a, const std::string& invocation) {
    const Split split = parse_split(a.split);
    const auto ck = load_checkpoint(a.checkpoint);
    const auto ds = load_valid_dataset(a.dataset);
    require_compatible(ck.params, ds);
    if (a.out.empty())
        a.out = (fs::path(default_run_dir(cfg.eval.seed)) / ("embeddings_" + a.split + ".csv")).string();
    ensure_parent(a.out);
    const auto rows = export_embeddings(ck.params, ds, split, a.out);

    Manifest m;
    m.command = "export";
    m.args = {{"checkpoint", a.checkpoint}, {"dataset", a.dataset}, {"split", a.split}, {"out", a.out}};
    m.config_text = to_text(cfg);
    m.seed = cfg.eval.seed;
    m.artifacts = {{"checkpoint", a.checkpoint}, {"dataset", a.dataset}, {"embeddings", a.out}};
    m.extra = {{"invocation", invocation}, {"rows", rows}};
    m.write(a.out + ".manifest.json");
    std::cout << rows << " rows -> " << a.out << "\n";
    return kOk;
}

// ---------------------------------------------------------------- check

struct CheckArgs {
    std::string suite;
    std::uint64_t seed = 1;
    std::optional<std::size_t> trials;
    std::size_t coords = 100;
    std::optional<std::uint64_t> instance_seed;
    std::string out;
};

void print_report(const CheckReport& r) {
    std::cout << r.name << ": " << (r.passed() ? "PASS" : "FAIL") << "  instances=" << r.instances
              << " evaluations=" << r.evaluations << " failures=" << r.failures;
    if (r.name == "bound") {
        std::cout << " min_slack=" << r.worst;
    } else if (r.name == "hinge") {
        std::cout << " max_violation=" << r.worst;
    } else {
        std::cout << " max_rel_error=" << r.worst;
    }
    std::cout << "\n";
}

json report_json(const CheckReport& r) {
    json j{{"name", r.name},
           {"passed", r.passed()},
           {"instances", r.instances},
           {"evaluations", r.evaluations},
           {"failures", r.failures},
           {"worst", r.worst}};
    j["failing_seed"] = r.failing_seed ? json(*r.failing_seed) : json(nullptr);
    return j;
}

int run_check(const RunConfig& cfg, const CheckArgs& a, const std::string& invocation) {
    if (a.trials && *a.trials < 1) throw ConfigError("--trials: must be >= 1");
    std::vector<CheckReport> reports;
    if (a.suite == "grad") {
        for (auto t : {GradTarget::Implicit, GradTarget::Explicit, GradTarget::Total})
            reports.push_back(a.instance_seed ? gradient_instance(*a.instance_seed, a.coords, t)
                                              : gradient_check(a.seed, a.trials.value_or(20), a.coords, t));
    } else if (a.suite == "bound") {
        reports.push_back(a.instance_seed ? bound_instance(*a.instance_seed)
                                          : bound_check(a.seed, a.trials.value_or(1000)));
    } else {
        reports.push_back(a.instance_seed ? hinge_instance(*a.instance_seed, cfg.train.m)
                                          : hinge_check(a.seed, a.trials.value_or(100), cfg.train.m));
    }
    bool ok = true;
    for (const auto& r : reports) {
        print_report(r);
        if (!r.passed()) {
            ok = false;
            if (r.failing_seed)
                std::cout << "  failing instance seed " << *r.failing_seed << " (replay: vfa check " << a.suite
                          << " --instance-seed " << *r.failing_seed << ")\n";
        }
    }
    if (!a.out.empty()) {
        json j = json::array();
        for (const auto& r : reports) j.push_back(report_json(r));
        write_text(a.out, j.dump(2) + "\n");
        Manifest m;
        m.command = "check";
        m.args = {{"suite", a.suite}, {"seed", a.seed}, {"coords", a.coords}, {"out", a.out}};
        m.args["trials"] = a.trials ? json(*a.trials) : json(nullptr);
        m.args["instance_seed"] = a.instance_seed ? json(*a.instance_seed) : json(nullptr);
        m.config_text = to_text(cfg);
        m.seed = a.seed;
        m.artifacts = {{"report", a.out}};
        m.extra = {{"invocation", invocation}};
        m.write(a.out + ".manifest.json");
    }
    if (!ok) throw CheckFailed(a.suite + " check failed");
    return kOk;
}

// ---------------------------------------------------------------- sweep

struct SweepArgs {
    std::string dataset;
    std::string out_dir;
    std::vector<std::uint64_t> seeds{1, 2, 3};
};

struct Variant {
    const char* name;
    void (*apply)(TrainConfig&);
};

const std::vector<Variant>& sweep_variants() {
    static const std::vector<Variant> v{
        {"full", [](TrainConfig&) {}},
        {"-W", [](TrainConfig& t) { t.disable_reweighting = true; }},
        {"-E", [](TrainConfig& t) { t.disable_explicit = true; }},
        {"-I -W",
         [](TrainConfig& t) {
             t.disable_implicit = true;
             t.disable_reweighting = true;
         }},
        {"R_keep=0.6", [](TrainConfig& t) { t.R_keep = 0.6; }},
    };
    return v;
}

int run_sweep(RunConfig cfg, SweepArgs a, const std::string& invocation) {
    validate(cfg);
    if (a.seeds.empty()) throw ConfigError("--seeds: at least one seed required");
    const auto ds = load_valid_dataset(a.dataset);
    if (a.out_dir.empty()) a.out_dir = default_run_dir(a.seeds.front());
    json runs = json::array();
    json means = json::object();
    for (const auto& v : sweep_variants()) {
        double sum = 0.0;
        for (auto seed : a.seeds) {
            TrainConfig t = cfg.train;
            v.apply(t);
            t.seed = seed;
            validate(t);
            const auto model = train(t, ds);
            const auto report = evaluate_all(model.params, ds, Split::Test, cfg.eval);
            const double acc = report.get(Task::Matching, Direction::VoiceToFace, Restriction::Unrestricted).value();
            sum += acc;
            std::size_t personalized = 0, excluded_personalized = 0;
            for (auto id : model.label_to_id) personalized += ds.identities[id].is_personalized;
            const auto excluded = model.excluded_identity_ids();
            for (auto id : excluded) excluded_personalized += ds.identities[id].is_personalized;
            runs.push_back({{"variant", v.name},
                            {"seed", seed},
                            {"test_vf_u_acc2", acc},
                            {"best_validation", model.best_validation},
                            {"excluded", excluded.size()},
                            {"excluded_personalized", excluded_personalized},
                            {"train_personalized", personalized}});
            std::cout << v.name << " seed " << seed << ": V-F U 1:2 ACC " << acc << "\n";
        }
        means[v.name] = sum / static_cast<double>(a.seeds.size());
    }
    const auto out = fs::path(a.out_dir) / "sweep.json";
    write_text(out, json{{"runs", runs}, {"mean_test_vf_u_acc2", means}}.dump(2) + "\n");

    Manifest m;
    m.command = "sweep";
    m.args = {{"dataset", a.dataset}, {"out_dir", a.out_dir}, {"seeds", a.seeds}};
    m.config_text = to_text(cfg);
    m.seed = a.seeds.front();
    m.artifacts = {{"dataset", a.dataset}, {"summary", out.string()}};
    m.extra = {{"invocation", invocation}};
    m.write(fs::path(a.out_dir) / "manifest.json");
    std::cout << "summary: " << out.string() << "\n";
    return kOk;
}

// ---------------------------------------------------------------- replay

int run_replay(const std::string& manifest_path, const std::string& redirect) {
    const auto j = read_json(manifest_path);
    if (!j.contains("command") || !j.contains("args") || !j.contains("config"))
        throw IoError(manifest_path + ": not a vfa manifest");
    const auto cmd = j["command"].get<std::string>();
    const auto& args = j["args"];
    const RunConfig cfg = parse_config(j["config"].get<std::string>());
    const std::string inv = "replay " + manifest_path;
    auto pick = [&](const char* key) { return redirect.empty() ? args.at(key).get<std::string>() : redirect; };
    if (cmd == "synth") return run_synth(cfg, {pick("out"), args.at("text").get<bool>()}, inv);
    if (cmd == "train") {
        TrainArgs a;
        a.dataset = args.at("dataset").get<std::string>();
        a.out_dir = pick("out_dir");
        return run_train(cfg, a, inv);
    }
    if (cmd == "eval") {
        EvalArgs a;
        a.checkpoint = args.at("checkpoint").get<std::string>();
        a.dataset = args.at("dataset").get<std::string>();
        a.split = args.at("split").get<std::string>();
        a.out = pick("out");
        a.check_dims = args.at("check_dims").get<bool>();
        a.threads = args.at("threads").get<unsigned>();
        return run_eval(cfg, a, inv);
    }
    if (cmd == "export") {
        return run_export(cfg,
                          {args.at("checkpoint").get<std::string>(), args.at("dataset").get<std::string>(),
                           args.at("split").get<std::string>(), pick("out")},
                          inv);
    }
    if (cmd == "check") {
        CheckArgs a;
        a.suite = args.at("suite").get<std::string>();
        a.seed = args.at("seed").get<std::uint64_t>();
        a.coords = args.at("coords").get<std::size_t>();
        if (!args.at("trials").is_null()) a.trials = args.at("trials").get<std::size_t>();
        if (!args.at("instance_seed").is_null()) a.instance_seed = args.at("instance_seed").get<std::uint64_t>();
        a.out = pick("out");
        return run_check(cfg, a, inv);
    }
    if (cmd == "sweep") {
        SweepArgs a;
        a.dataset = args.at("dataset").get<std::string>();
        a.out_dir = pick("out_dir");
        a.seeds = args.at("seeds").get<std::vector<std::uint64_t>>();
        return run_sweep(cfg, a, inv);
    }
    throw IoError(manifest_path + ": unknown command '" + cmd + "'");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Voice-face association with two-level modality alignment and identity re-weighting"};
    app.set_version_flag("--version", VFA_VERSION);
    app.require_subcommand(1);
    const std::string invocation = argv_line(argc, argv);

    std::string config_path;
    std::optional<std::uint64_t> seed;
    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", config_path, "key = value config file");
        sub->add_option("--seed", seed, "root seed for this command (overrides VFA_SEED and the config)");
    };

    SynthArgs synth;
    auto* s = app.add_subcommand("synth", "generate a synthetic dataset");
    add_common(s);
    s->add_option("--out", synth.out, "dataset path (default: <run dir>/dataset.bin)");
    s->add_flag("--text", synth.text, "write the text manifest format instead of binary");

    TrainArgs tr;
    auto* t = app.add_subcommand("train", "three-stage training");
    add_common(t);
    t->add_option("--dataset", tr.dataset, "dataset file")->required();
    t->add_option("--out-dir", tr.out_dir, "run directory (default: runs/<timestamp>-seed<seed>)");
    t->add_flag("--no-explicit", tr.no_explicit, "drop the explicit (N-pair) term (-E)");
    t->add_flag("--no-implicit", tr.no_implicit, "drop the implicit (classification) term (-I)");
    t->add_flag("--no-reweight", tr.no_reweight, "skip identity re-weighting (-W)");
    t->add_option("--r-keep", tr.r_keep, "fraction of identities kept when stage 2 stops");

    EvalArgs ev;
    unsigned threads = 0;
    auto* e = app.add_subcommand("eval", "matching, verification and retrieval metrics");
    add_common(e);
    e->add_option("--checkpoint", ev.checkpoint)->required();
    e->add_option("--dataset", ev.dataset)->required();
    e->add_option("--split", ev.split, "train, validation or test")
        ->check(CLI::IsMember({"train", "validation", "test"}));
    e->add_option("--out", ev.out, "report JSON path (curve CSVs are written beside it)");
    e->add_option("--threads", threads, "scoring threads (overrides VFA_THREADS)");

    ExportArgs ex;
    auto* x = app.add_subcommand("export", "write per-sample embeddings as CSV");
    add_common(x);
    x->add_option("--checkpoint", ex.checkpoint)->required();
    x->add_option("--dataset", ex.dataset)->required();
    x->add_option("--split", ex.split)->check(CLI::IsMember({"train", "validation", "test"}));
    x->add_option("--out", ex.out);

    CheckArgs ck;
    std::optional<std::uint64_t> check_seed;
    auto* c = app.add_subcommand("check", "gradient, bound and hinge self-checks");
    c->add_option("suite", ck.suite, "grad, bound or hinge")->required()->check(CLI::IsMember({"grad", "bound", "hinge"}));
    c->add_option("--config", config_path);
    c->add_option("--seed", check_seed);
    c->add_option("--trials", ck.trials, "instances (default: grad 20, bound 1000, hinge 100)");
    c->add_option("--coords", ck.coords, "coordinates per gradient instance");
    c->add_option("--instance-seed", ck.instance_seed, "replay a single instance");
    c->add_option("--out", ck.out, "optional JSON report");

    SweepArgs sw;
    auto* w = app.add_subcommand("sweep", "ablation sweep over seeds: full, -W, -E, -I -W, R_keep=0.6");
    w->add_option("--config", config_path);
    w->add_option("--dataset", sw.dataset)->required();
    w->add_option("--out-dir", sw.out_dir);
    w->add_option("--seeds", sw.seeds)->delimiter(',');

    std::string manifest, redirect;
    auto* r = app.add_subcommand("replay", "re-run a command from its manifest");
    r->add_option("manifest", manifest)->required();
    r->add_option("--redirect", redirect, "replacement for the recorded output path or directory");

    try {
        app.parse(argc, argv);
    } catch (const CLI::Success& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kConfig;
    }

    try {
        RunConfig cfg = resolve_config(config_path);
        const auto root = seed ? seed : env_seed();
        if (s->parsed()) {
            if (root) cfg.synth.seed = *root;
            return run_synth(cfg, synth, invocation);
        }
        if (t->parsed()) {
            if (root) cfg.train.seed = *root;
            return run_train(cfg, tr, invocation);
        }
        if (e->parsed()) {
            if (root) cfg.eval.seed = *root;
            ev.threads = threads ? threads : env_threads(cfg.eval.threads);
            if (!config_path.empty()) ev.check_dims = true;
            return run_eval(cfg, ev, invocation);
        }
        if (x->parsed()) return run_export(cfg, ex, invocation);
        if (c->parsed()) {
            if (const auto cs = check_seed ? check_seed : env_seed()) ck.seed = *cs;
            return run_check(cfg, ck, invocation);
        }
        if (w->parsed()) return run_sweep(cfg, sw, invocation);
        if (r->parsed()) return run_replay(manifest, redirect);
    } catch (const CheckFailed& err) {
        std::cerr << "error: " << err.what() << "\n";
        return kCheckFailed;
    } catch (const ConfigError& err) {
        std::cerr << "config error: " << err.what() << "\n";
        return kConfig;
    } catch (const DimensionMismatch& err) {
        std::cerr << "dimension mismatch: " << err.what() << "\n";
        return kMismatch;
    } catch (const TrainingAbort& err) {
        std::cerr << "training aborted: " << err.what() << "\n";
        return kAbort;
    } catch (const IoError& err) {
        std::cerr << "I/O error: " << err.what() << "\n";
        return kIo;
    }
    return kOk;
}
