// wfkit: website-fingerprinting experiment pipeline.
//   synth     generate a labeled synthetic trace dataset
//   defend    apply a traffic-shaping defense to a dataset
//   featurize turn traces into IAT-histogram (or TAM) tensors
//   train     train the channel-attention CNN on a feature cache
//   eval      closed-/open-world metrics from trained checkpoints

#include <algorithm>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iostream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>

#include "wfkit/defense.hpp"
#include "wfkit/error.hpp"
#include "wfkit/feature.hpp"
#include "wfkit/model.hpp"
#include "wfkit/synth.hpp"
#include "wfkit/tensor.hpp"
#include "wfkit/trace.hpp"
#include "wfkit/train_eval.hpp"

namespace fs = std::filesystem;
using namespace wfkit;

namespace {

std::uint64_t env_seed_default() {
    const char* s = std::getenv("WFKIT_SEED");
    if (!s || !*s) return 0;
    try {
        return std::stoull(s);
    } catch (...) {
        throw ConfigError(std::string("WFKIT_SEED is not an integer: ") + s);
    }
}

// FNV-1a over the canonical config rendering; recorded in the run manifest.
std::uint64_t fnv1a(const std::string& s) {
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

void write_run_manifest(const std::string& out_dir, const std::string& command,
                        const std::vector<std::pair<std::string, std::string>>& fields,
                        std::uint64_t seed) {
    std::string cfg;
    for (const auto& [k, v] : fields) cfg += k + "=" + v + "\n";
    std::string out = "command=" + command + "\n";
    out += "seed=" + std::to_string(seed) + "\n";
    char hash[32];
    std::snprintf(hash, sizeof hash, "%016llx", static_cast<unsigned long long>(fnv1a(cfg)));
    out += "config_hash=" + std::string(hash) + "\n";
    out += cfg;
    write_file((fs::path(out_dir) / "run-manifest.txt").string(), out);
}

void ensure_out_dir(const std::string& out_dir) {
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) throw IoError("cannot create directory " + out_dir + ": " + ec.message());
}

// Ordered parallel map: results land by index, so output is identical for
// any worker count.
void parallel_for(std::size_t count, int jobs, const std::function<void(std::size_t)>& fn) {
    if (jobs < 1) jobs = 1;
    const unsigned hw = std::max(1u, std::thread::hardware_concurrency());
    const std::size_t workers = std::min<std::size_t>(std::min<std::size_t>(jobs, hw), count);
    if (workers <= 1) {
        for (std::size_t i = 0; i < count; ++i) fn(i);
        return;
    }
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w)
        pool.emplace_back([&, w]() {
            for (std::size_t i = w; i < count; i += workers) fn(i);
        });
    for (auto& t : pool) t.join();
}

DatasetManifest load_dataset(const std::string& in) {
    if (fs::is_directory(in)) {
        const fs::path mcsv = fs::path(in) / "manifest.csv";
        if (fs::exists(mcsv)) return read_manifest_csv(mcsv.string());
        return scan_dataset(in);
    }
    if (fs::exists(in)) return read_manifest_csv(in);
    throw IoError("dataset not found: " + in);
}

std::string fmt(double v) { return format_double(v); }

// ----- subcommand configs ------------------------------------------------------

struct SynthArgs {
    std::string out;
    SynthSpec spec;
    double base_median_ms = 1.5;
};

struct DefendArgs {
    std::string in, out, defense = "front";
    FrontConfig front_cfg;
    TamarawConfig tamaraw_cfg;
    DecayShaperConfig decay_cfg;
    int jobs = 0;
};

struct FeaturizeArgs {
    std::string in, out, repr = "iat";
    double slot_ms = 44.0;
    int slots = 1800;
    int bins = 9;
    double delta_min = 1e-4, delta_max = 1.0;
    int min_cells = 0;
    int jobs = 0;
};

struct TrainArgs {
    std::string features, labels, out;
    int epochs = 50, batch = 64;
    double lr = 1e-3, wd = 5e-4;
    bool decoupled = false;
    int kernels = 4, se_reduction = 16;
    int stage_a = 32, stage_a2 = 64, stage_b = 128;
    double dropout = 0.1;
    int classes = 0; // 0 => derive from labels
    int folds = 10, fold = 0;
    bool all_folds = false;
};

struct EvalArgs {
    std::string features, labels, model, models_dir, out, mode = "closed";
    int folds = 10, fold = 0, tau_points = 101, batch = 64;
    bool all_folds = false;
};

// ----- commands ------------------------------------------------------------------

int cmd_synth(const SynthArgs& a, std::uint64_t seed) {
    SynthSpec spec = a.spec;
    spec.seed = seed;
    spec.base_iat_median = a.base_median_ms / 1000.0;
    ensure_out_dir(a.out);
    const DatasetManifest m = synth_generate(spec, a.out);
    write_run_manifest(a.out, "synth",
                       {{"classes", std::to_string(spec.class_count)},
                        {"traces_per_class", std::to_string(spec.traces_per_class)},
                        {"nonmonitored", std::to_string(spec.nonmonitored_traces)},
                        {"base_median_ms", fmt(a.base_median_ms)},
                        {"median_factor", fmt(spec.iat_median_factor)},
                        {"sigma", fmt(spec.iat_sigma)}},
                       seed);
    std::cout << "synth: " << m.entries.size() << " traces, " << m.class_count << " classes -> "
              << a.out << "\n";
    return 0;
}

int cmd_defend(const DefendArgs& a, std::uint64_t seed) {
    const DatasetManifest manifest = load_dataset(a.in);
    const DefenseKind kind = parse_defense(a.defense);
    ensure_out_dir(a.out);

    std::vector<Trace> originals(manifest.entries.size());
    std::vector<DefendedTrace> defended(manifest.entries.size());
    parallel_for(manifest.entries.size(), a.jobs, [&](std::size_t i) {
        originals[i] = load_trace(manifest.full_path(i));
        const std::uint64_t trace_seed = derive_seed(seed, 0x44454645ull /*DEFE*/, i);
        switch (kind) {
            case DefenseKind::front: defended[i] = front(originals[i], a.front_cfg, trace_seed); break;
            case DefenseKind::tamaraw: defended[i] = tamaraw(originals[i], a.tamaraw_cfg, trace_seed); break;
            case DefenseKind::decay_shaper:
                defended[i] = decay_shaper(originals[i], a.decay_cfg, trace_seed);
                break;
        }
    });
    for (std::size_t i = 0; i < manifest.entries.size(); ++i)
        write_file((fs::path(a.out) / manifest.entries[i].path).string(), serialize_defended(defended[i]));

    DatasetManifest out_manifest = manifest;
    out_manifest.root = a.out;
    write_manifest_csv(out_manifest, (fs::path(a.out) / "manifest.csv").string());

    const Overheads oh = compute_overheads(originals, defended);
    write_file((fs::path(a.out) / "overheads.csv").string(),
               "data_overhead,time_overhead\n" + fmt(oh.data) + "," + fmt(oh.time) + "\n");

    std::vector<std::pair<std::string, std::string>> fields{{"input", a.in}, {"defense", a.defense}};
    if (kind == DefenseKind::front) {
        fields.push_back({"n_min", std::to_string(a.front_cfg.n_min)});
        fields.push_back({"n_max", std::to_string(a.front_cfg.n_max)});
        fields.push_back({"w_min", fmt(a.front_cfg.w_min)});
        fields.push_back({"w_max", fmt(a.front_cfg.w_max)});
    } else if (kind == DefenseKind::tamaraw) {
        fields.push_back({"rho_out", fmt(a.tamaraw_cfg.rho_out)});
        fields.push_back({"rho_in", fmt(a.tamaraw_cfg.rho_in)});
        fields.push_back({"pad_multiple", std::to_string(a.tamaraw_cfg.pad_multiple)});
    } else {
        fields.push_back({"rate0", fmt(a.decay_cfg.rate0)});
        fields.push_back({"decay", fmt(a.decay_cfg.decay)});
        fields.push_back({"surge_threshold", fmt(a.decay_cfg.surge_threshold)});
        fields.push_back({"out_ratio", fmt(a.decay_cfg.out_ratio)});
    }
    write_run_manifest(a.out, "defend", fields, seed);
    std::cout << "defend: " << manifest.entries.size() << " traces, data_overhead=" << fmt(oh.data)
              << " time_overhead=" << fmt(oh.time) << " -> " << a.out << "\n";
    return 0;
}

int cmd_featurize(const FeaturizeArgs& a, std::uint64_t seed) {
    const DatasetManifest manifest = load_dataset(a.in);
    if (manifest.entries.empty()) throw DataError("manifest has no entries to featurize");
    const Representation repr = parse_representation(a.repr);
    IatConfig cfg = IatConfig::with_defaults(a.slot_ms / 1000.0, a.slots, a.bins, a.delta_min, a.delta_max);
    ensure_out_dir(a.out);

    std::vector<FeatureTensor> tensors(manifest.entries.size());
    std::vector<char> keep(manifest.entries.size(), 1);
    parallel_for(manifest.entries.size(), a.jobs, [&](std::size_t i) {
        const Trace trace = load_trace(manifest.full_path(i));
        if (a.min_cells > 0 && trace.cells.size() < static_cast<std::size_t>(a.min_cells)) {
            keep[i] = 0;
            return;
        }
        tensors[i] = repr == Representation::iat ? iat_histogram(trace, cfg)
                                                 : tam(trace, cfg.slot_duration, cfg.slot_count);
    });
    std::vector<FeatureTensor> kept;
    std::vector<int> labels;
    for (std::size_t i = 0; i < tensors.size(); ++i) {
        if (!keep[i]) continue;
        kept.push_back(std::move(tensors[i]));
        labels.push_back(manifest.entries[i].label);
    }
    if (kept.empty()) throw DataError("all traces were filtered out by min_cells");
    write_feature_cache(kept, (fs::path(a.out) / "features.bin").string());
    write_labels_csv(labels, (fs::path(a.out) / "labels.csv").string());

    write_run_manifest(a.out, "featurize",
                       {{"input", a.in},
                        {"repr", a.repr},
                        {"slot_ms", fmt(a.slot_ms)},
                        {"slots", std::to_string(a.slots)},
                        {"bins", std::to_string(a.bins)},
                        {"delta_min", fmt(a.delta_min)},
                        {"delta_max", fmt(a.delta_max)},
                        {"min_cells", std::to_string(a.min_cells)}},
                       seed);
    std::cout << "featurize: " << kept.size() << " tensors (" << (tensors.size() - kept.size())
              << " filtered) -> " << a.out << "\n";
    return 0;
}

ModelConfig model_config_from(const TrainArgs& a, const std::vector<FeatureTensor>& feats,
                              const std::vector<int>& labels, std::uint64_t seed) {
    ModelConfig mc;
    const auto& shape = feats.front().shape;
    if (shape.size() == 3) {
        mc.bin_count = static_cast<int>(shape[0]);
        mc.slot_count = static_cast<int>(shape[2]);
    } else if (shape.size() == 2) {
        mc.bin_count = 1;
        mc.slot_count = static_cast<int>(shape[1]);
    } else {
        throw ShapeError("feature cache tensors must be [G,2,L] or [2,L]");
    }
    mc.class_count = a.classes > 0 ? a.classes : 1 + *std::max_element(labels.begin(), labels.end());
    mc.kernel_count = a.kernels;
    mc.se_reduction = a.se_reduction;
    mc.stage_a_channels = a.stage_a;
    mc.stage_a2_channels = a.stage_a2;
    mc.stage_b_channels = a.stage_b;
    mc.dropout_p = a.dropout;
    mc.seed = seed;
    mc.validate();
    return mc;
}

int cmd_train(const TrainArgs& a, std::uint64_t seed) {
    const std::vector<FeatureTensor> feats = read_feature_cache(a.features);
    const std::vector<int> labels = read_labels_csv(a.labels);
    if (feats.size() != labels.size())
        throw DataError("feature cache and labels disagree: " + std::to_string(feats.size()) + " vs " +
                        std::to_string(labels.size()));
    if (feats.empty()) throw DataError("empty feature cache");
    const ModelConfig mc = model_config_from(a, feats, labels, seed);
    ensure_out_dir(a.out);

    const std::vector<SplitPlan> plans = make_folds(labels, a.folds, seed);
    TrainConfig tc;
    tc.epochs = a.epochs;
    tc.batch = a.batch;
    tc.lr = a.lr;
    tc.weight_decay = a.wd;
    tc.decoupled_decay = a.decoupled;
    tc.seed = seed;

    write_file((fs::path(a.out) / "model-config.txt").string(), model_config_text(mc));
    const int lo = a.all_folds ? 0 : a.fold;
    const int hi = a.all_folds ? a.folds : a.fold + 1;
    if (a.fold < 0 || a.fold >= a.folds) throw ConfigError("fold index out of range");
    for (int f = lo; f < hi; ++f) {
        WfcatModel<float> model(mc);
        const TrainResult res = train(model, feats, labels, plans[static_cast<std::size_t>(f)], tc);
        std::vector<Parameter<float>*> params = model.parameters();
        write_checkpoint((fs::path(a.out) / ("model-fold" + std::to_string(f) + ".ckpt")).string(),
                         model.state_buffers());
        write_file((fs::path(a.out) / ("history-fold" + std::to_string(f) + ".csv")).string(),
                   history_csv(res.history));
        std::cout << "train: fold " << f << " best val acc " << fmt(res.best_val_acc) << " at epoch "
                  << res.best_epoch << "\n";
    }

    write_run_manifest(a.out, "train",
                       {{"features", a.features},
                        {"labels", a.labels},
                        {"epochs", std::to_string(a.epochs)},
                        {"batch", std::to_string(a.batch)},
                        {"lr", fmt(a.lr)},
                        {"wd", fmt(a.wd)},
                        {"decoupled_wd", a.decoupled ? "1" : "0"},
                        {"kernels", std::to_string(a.kernels)},
                        {"se_reduction", std::to_string(a.se_reduction)},
                        {"folds", std::to_string(a.folds)},
                        {"fold", a.all_folds ? std::string("all") : std::to_string(a.fold)},
                        {"classes", std::to_string(mc.class_count)}},
                       seed);
    return 0;
}

int cmd_eval(const EvalArgs& a, std::uint64_t seed) {
    const std::vector<FeatureTensor> feats = read_feature_cache(a.features);
    const std::vector<int> labels = read_labels_csv(a.labels);
    if (feats.size() != labels.size()) throw DataError("feature cache and labels disagree");
    if (a.mode != "closed" && a.mode != "open")
        throw ConfigError("eval mode must be closed or open, got " + a.mode);
    ensure_out_dir(a.out);

    std::string models_dir = a.models_dir;
    std::vector<std::pair<int, std::string>> fold_models; // (fold, checkpoint path)
    if (!a.model.empty()) {
        fold_models.push_back({a.fold, a.model});
        if (models_dir.empty()) models_dir = fs::path(a.model).parent_path().string();
    } else {
        if (models_dir.empty()) throw ConfigError("eval needs --model or --models");
        const int lo = a.all_folds ? 0 : a.fold;
        const int hi = a.all_folds ? a.folds : a.fold + 1;
        for (int f = lo; f < hi; ++f) {
            const fs::path p = fs::path(models_dir) / ("model-fold" + std::to_string(f) + ".ckpt");
            if (!fs::exists(p)) throw IoError("missing checkpoint " + p.string());
            fold_models.push_back({f, p.string()});
        }
    }
    const fs::path cfg_path = fs::path(models_dir) / "model-config.txt";
    if (!fs::exists(cfg_path)) throw IoError("missing model config " + cfg_path.string());
    const ModelConfig mc = parse_model_config_text(read_file(cfg_path.string()));

    const std::vector<SplitPlan> plans = make_folds(labels, a.folds, seed);

    std::vector<Prediction> pooled;
    std::vector<int> pooled_labels;
    for (const auto& [f, ckpt] : fold_models) {
        if (f < 0 || f >= a.folds) throw ConfigError("fold index out of range");
        WfcatModel<float> model(mc);
        model.load_state(read_checkpoint(ckpt).model);
        const SplitPlan& plan = plans[static_cast<std::size_t>(f)];
        std::vector<Prediction> preds = predict(model, feats, plan.test, a.batch);
        for (std::size_t i = 0; i < plan.test.size(); ++i) {
            pooled.push_back(std::move(preds[i]));
            pooled_labels.push_back(labels[static_cast<std::size_t>(plan.test[i])]);
        }
    }

    std::string summary = "metric,value\n";
    if (a.mode == "closed") {
        const double acc = closed_world_accuracy(pooled, pooled_labels);
        summary += "accuracy," + fmt(acc) + "\n";
        std::cout << "eval: closed-world accuracy " << fmt(acc) << " over " << pooled.size()
                  << " traces\n";
    } else {
        // Open world: monitored classes are 0..C-2 of a C-logit model (the
        // last logit is the non-monitored class).
        const int monitored = mc.class_count - 1;
        const EvalReport report = pr_curve(pooled, pooled_labels, monitored, tau_grid(a.tau_points));
        write_file((fs::path(a.out) / "pr_curve.csv").string(), pr_curve_csv(report));
        summary += "accuracy," + fmt(report.accuracy) + "\n";
        summary += "best_f1," + fmt(report.best_f1) + "\n";
        summary += "best_tau," + (report.best_tau ? fmt(*report.best_tau) : std::string("NA")) + "\n";
        std::cout << "eval: open-world accuracy " << fmt(report.accuracy) << " best F1 "
                  << fmt(report.best_f1) << " over " << pooled.size() << " traces\n";
    }
    write_file((fs::path(a.out) / "summary.csv").string(), summary);

    write_run_manifest(a.out, "eval",
                       {{"features", a.features},
                        {"labels", a.labels},
                        {"mode", a.mode},
                        {"folds", std::to_string(a.folds)},
                        {"fold", a.all_folds ? std::string("all") : std::to_string(a.fold)},
                        {"tau_points", std::to_string(a.tau_points)}},
                       seed);
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"website-fingerprinting experiment pipeline"};
    app.require_subcommand(1);
    app.fallthrough();
    app.set_config("--config", "", "key=value config file (flags win)");

    std::uint64_t seed = 0;
    bool seed_set = false;
    app.add_option("--seed", seed, "global RNG seed (env WFKIT_SEED as fallback)")
        ->each([&seed_set](const std::string&) { seed_set = true; });

    SynthArgs sa;
    CLI::App* synth = app.add_subcommand("synth", "generate a synthetic dataset");
    synth->add_option("--out", sa.out, "output directory")->required();
    synth->add_option("--classes", sa.spec.class_count, "monitored class count");
    synth->add_option("--traces", sa.spec.traces_per_class, "traces per class");
    synth->add_option("--nonmonitored", sa.spec.nonmonitored_traces, "extra non-monitored traces");
    synth->add_option("--base-median-ms", sa.base_median_ms, "class-0 incoming IAT median (ms)");
    synth->add_option("--median-factor", sa.spec.iat_median_factor, "per-class median factor");
    synth->add_option("--sigma", sa.spec.iat_sigma, "log-space IAT spread");
    synth->add_option("--cells-min", sa.spec.cells_min, "min incoming cells per trace");
    synth->add_option("--cells-max", sa.spec.cells_max, "max incoming cells per trace");
    synth->add_option("--duration-min", sa.spec.duration_min, "min target duration (s)");
    synth->add_option("--duration-max", sa.spec.duration_max, "max target duration (s)");

    DefendArgs da;
    CLI::App* defend = app.add_subcommand("defend", "apply a defense to a dataset");
    defend->add_option("--in", da.in, "input dataset directory or manifest")->required();
    defend->add_option("--out", da.out, "output directory")->required();
    defend->add_option("--defense", da.defense, "front | tamaraw | decay_shaper")->required();
    defend->add_option("--n-min", da.front_cfg.n_min, "front: min dummies per direction");
    defend->add_option("--n-max", da.front_cfg.n_max, "front: max dummies per direction");
    defend->add_option("--w-min", da.front_cfg.w_min, "front: min Rayleigh scale (s)");
    defend->add_option("--w-max", da.front_cfg.w_max, "front: max Rayleigh scale (s)");
    defend->add_option("--rho-out", da.tamaraw_cfg.rho_out, "tamaraw: outgoing gap (s)");
    defend->add_option("--rho-in", da.tamaraw_cfg.rho_in, "tamaraw: incoming gap (s)");
    defend->add_option("--pad-multiple", da.tamaraw_cfg.pad_multiple, "tamaraw: pad counts to a multiple");
    defend->add_option("--rate0", da.decay_cfg.rate0, "decay_shaper: initial rate (cells/s)");
    defend->add_option("--decay", da.decay_cfg.decay, "decay_shaper: rate decay per second");
    defend->add_option("--surge-threshold", da.decay_cfg.surge_threshold, "decay_shaper: surge trigger");
    defend->add_option("--out-ratio", da.decay_cfg.out_ratio, "decay_shaper: outgoing release ratio");
    defend->add_option("--jobs", da.jobs, "worker threads (default: cores)");

    FeaturizeArgs fa;
    CLI::App* featurize = app.add_subcommand("featurize", "build feature tensors");
    featurize->add_option("--in", fa.in, "input dataset directory or manifest")->required();
    featurize->add_option("--out", fa.out, "output directory")->required();
    featurize->add_option("--repr", fa.repr, "iat | tam");
    featurize->add_option("--slot-ms", fa.slot_ms, "time slot width (ms)");
    featurize->add_option("--slots", fa.slots, "number of time slots (L)");
    featurize->add_option("--bins", fa.bins, "number of IAT bins (G)");
    featurize->add_option("--delta-min", fa.delta_min, "smallest interior IAT boundary (s)");
    featurize->add_option("--delta-max", fa.delta_max, "largest interior IAT boundary (s)");
    featurize->add_option("--min-cells", fa.min_cells, "drop traces shorter than this many cells");
    featurize->add_option("--jobs", fa.jobs, "worker threads (default: cores)");

    TrainArgs ta;
    CLI::App* train_cmd = app.add_subcommand("train", "train the model");
    train_cmd->add_option("--features", ta.features, "feature cache (features.bin)")->required();
    train_cmd->add_option("--labels", ta.labels, "labels CSV")->required();
    train_cmd->add_option("--out", ta.out, "output directory")->required();
    train_cmd->add_option("--epochs", ta.epochs, "training epochs");
    train_cmd->add_option("--batch", ta.batch, "batch size");
    train_cmd->add_option("--lr", ta.lr, "learning rate");
    train_cmd->add_option("--wd", ta.wd, "weight decay");
    train_cmd->add_flag("--decoupled-wd", ta.decoupled, "decoupled weight decay");
    train_cmd->add_option("--kernels", ta.kernels, "inception branch count (K)");
    train_cmd->add_option("--se-reduction", ta.se_reduction, "SE reduction (r)");
    train_cmd->add_option("--stage-a", ta.stage_a, "first-stage channels");
    train_cmd->add_option("--stage-a2", ta.stage_a2, "second-stage channels");
    train_cmd->add_option("--stage-b", ta.stage_b, "1-D stage channels");
    train_cmd->add_option("--dropout", ta.dropout, "dropout probability");
    train_cmd->add_option("--classes", ta.classes, "logit count (default: from labels)");
    train_cmd->add_option("--folds", ta.folds, "cross-validation fold count");
    train_cmd->add_option("--fold", ta.fold, "fold to train");
    train_cmd->add_flag("--all-folds", ta.all_folds, "train every fold");

    EvalArgs ea;
    CLI::App* eval_cmd = app.add_subcommand("eval", "evaluate trained checkpoints");
    eval_cmd->add_option("--features", ea.features, "feature cache (features.bin)")->required();
    eval_cmd->add_option("--labels", ea.labels, "labels CSV")->required();
    eval_cmd->add_option("--model", ea.model, "single checkpoint file");
    eval_cmd->add_option("--models", ea.models_dir, "directory of model-fold*.ckpt");
    eval_cmd->add_option("--out", ea.out, "output directory")->required();
    eval_cmd->add_option("--mode", ea.mode, "closed | open");
    eval_cmd->add_option("--folds", ea.folds, "cross-validation fold count");
    eval_cmd->add_option("--fold", ea.fold, "fold to evaluate");
    eval_cmd->add_flag("--all-folds", ea.all_folds, "pool every fold's test predictions");
    eval_cmd->add_option("--tau-grid", ea.tau_points, "confidence threshold grid size");
    eval_cmd->add_option("--batch", ea.batch, "prediction batch size");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e); // --help / --version
        std::string msg = e.what();
        const std::size_t eol = msg.find('\n');
        if (eol != std::string::npos) msg.resize(eol);
        std::cerr << "error: config: " << msg << "\n";
        return 2;
    }

    try {
        if (!seed_set) seed = env_seed_default();
        if (synth->parsed()) return cmd_synth(sa, seed);
        if (defend->parsed()) return cmd_defend(da, seed);
        if (featurize->parsed()) return cmd_featurize(fa, seed);
        if (train_cmd->parsed()) return cmd_train(ta, seed);
        if (eval_cmd->parsed()) return cmd_eval(ea, seed);
    } catch (const Error& e) {
        std::cerr << "error: " << e.category() << ": " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: internal: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
