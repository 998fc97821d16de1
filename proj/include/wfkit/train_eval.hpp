#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "wfkit/error.hpp"
#include "wfkit/feature.hpp"
#include "wfkit/model.hpp"
#include "wfkit/rng.hpp"
#include "wfkit/tensor.hpp"

namespace wfkit {

// ----- data splitting ---------------------------------------------------------

struct SplitPlan {
    std::vector<int> train, val, test; // global dataset indices
    int fold = 0;
    std::uint64_t seed = 0;
};

/// K-fold plans: per class, instances are shuffled once by seed and dealt
/// into `folds` groups; fold i tests on group i, validates on group
/// (i+1 mod folds), trains on the rest (8:1:1 for folds=10).
inline std::vector<SplitPlan> make_folds(const std::vector<int>& labels, int folds, std::uint64_t seed) {
    if (folds < 3) throw ConfigError("make_folds: need folds >= 3 for disjoint train/val/test");
    std::map<int, std::vector<int>> by_class;
    for (std::size_t i = 0; i < labels.size(); ++i) by_class[labels[i]].push_back(static_cast<int>(i));
    for (auto& [cls, idx] : by_class) {
        if (static_cast<int>(idx.size()) < folds)
            throw DataError("class " + std::to_string(cls) + " has " + std::to_string(idx.size()) +
                            " instances; " + std::to_string(folds) + "-fold split needs at least " +
                            std::to_string(folds));
        Rng rng(seed, 0x464f4c44u /*FOLD*/, static_cast<std::uint64_t>(cls));
        for (std::size_t i = idx.size() - 1; i > 0; --i) {
            const std::size_t j = static_cast<std::size_t>(
                rng.uniform_int(0, static_cast<std::int64_t>(i)));
            std::swap(idx[i], idx[j]);
        }
    }
    std::vector<SplitPlan> plans(static_cast<std::size_t>(folds));
    for (int f = 0; f < folds; ++f) {
        SplitPlan& p = plans[static_cast<std::size_t>(f)];
        p.fold = f;
        p.seed = seed;
        const int val_group = (f + 1) % folds;
        for (const auto& [cls, idx] : by_class)
            for (std::size_t i = 0; i < idx.size(); ++i) {
                const int g = static_cast<int>(i) % folds;
                if (g == f)
                    p.test.push_back(idx[i]);
                else if (g == val_group)
                    p.val.push_back(idx[i]);
                else
                    p.train.push_back(idx[i]);
            }
    }
    return plans;
}

// ----- training ------------------------------------------------------------------

struct TrainConfig {
    int epochs = 50;
    int batch = 64;
    double lr = 1e-3;
    double weight_decay = 5e-4;
    bool decoupled_decay = false;
    std::uint64_t seed = 0;
};

struct EpochStats {
    int epoch = 0;
    double train_loss = 0.0;
    double val_acc = 0.0;
};

struct TrainResult {
    std::vector<EpochStats> history;
    double best_val_acc = 0.0;
    int best_epoch = -1;
};

struct Prediction {
    std::vector<double> y; // confidence vector, sums to 1
    int argmax = 0;
    double confidence = 0.0;
};

namespace detail {

template <typename S>
Tensor<S> gather_batch(const std::vector<FeatureTensor>& features, const std::vector<int>& idx,
                       std::size_t lo, std::size_t hi, int bin_count, int slot_count) {
    std::vector<const FeatureTensor*> ptrs;
    ptrs.reserve(hi - lo);
    for (std::size_t i = lo; i < hi; ++i)
        ptrs.push_back(&features[static_cast<std::size_t>(idx[i])]);
    return batch_from_features<S>(ptrs, bin_count, slot_count);
}

} // namespace detail

/// Eval-mode class-probability predictions for the given dataset indices.
template <typename S>
std::vector<Prediction> predict(WfcatModel<S>& model, const std::vector<FeatureTensor>& features,
                                const std::vector<int>& indices, int batch = 64) {
    std::vector<Prediction> out;
    out.reserve(indices.size());
    const int C = model.cfg.class_count;
    for (std::size_t lo = 0; lo < indices.size(); lo += static_cast<std::size_t>(batch)) {
        const std::size_t hi = std::min(indices.size(), lo + static_cast<std::size_t>(batch));
        Tensor<S> x = detail::gather_batch<S>(features, indices, lo, hi, model.cfg.bin_count,
                                              model.cfg.slot_count);
        Tensor<S> logits = model.forward(x, false);
        const std::vector<double> probs = softmax_rows(logits);
        for (std::size_t n = 0; n < hi - lo; ++n) {
            Prediction p;
            p.y.assign(probs.begin() + static_cast<std::ptrdiff_t>(n * static_cast<std::size_t>(C)),
                       probs.begin() + static_cast<std::ptrdiff_t>((n + 1) * static_cast<std::size_t>(C)));
            p.argmax = static_cast<int>(std::max_element(p.y.begin(), p.y.end()) - p.y.begin());
            p.confidence = p.y[static_cast<std::size_t>(p.argmax)];
            out.push_back(std::move(p));
        }
    }
    return out;
}

template <typename S>
double accuracy_on(WfcatModel<S>& model, const std::vector<FeatureTensor>& features,
                   const std::vector<int>& labels, const std::vector<int>& indices, int batch = 64) {
    if (indices.empty()) throw DataError("accuracy_on: empty index set");
    const std::vector<Prediction> preds = predict(model, features, indices, batch);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < indices.size(); ++i)
        if (preds[i].argmax == labels[static_cast<std::size_t>(indices[i])]) ++correct;
    return static_cast<double>(correct) / static_cast<double>(indices.size());
}

/// Mini-batch training with per-epoch seeded shuffling. After each epoch the
/// validation accuracy is computed in eval mode; the returned model carries
/// the parameters of the best-validation epoch. A non-finite loss aborts
/// with the epoch/batch coordinates.
template <typename S>
TrainResult train(WfcatModel<S>& model, const std::vector<FeatureTensor>& features,
                  const std::vector<int>& labels, const SplitPlan& split, const TrainConfig& tc) {
    if (split.train.empty() || split.val.empty()) throw DataError("train: empty train or val split");
    if (tc.epochs < 1 || tc.batch < 1) throw ConfigError("train: epochs and batch must be positive");
    for (int i : split.train)
        if (labels[static_cast<std::size_t>(i)] >= model.cfg.class_count)
            throw DataError("train: label " + std::to_string(labels[static_cast<std::size_t>(i)]) +
                            " out of range for class_count " + std::to_string(model.cfg.class_count));

    std::vector<Parameter<S>*> params = model.parameters();
    Adam<S> opt(params);
    opt.lr = tc.lr;
    opt.weight_decay = tc.weight_decay;
    opt.decoupled = tc.decoupled_decay;

    TrainResult result;
    std::vector<NamedBuffer> best_state = model.state_buffers();
    std::vector<int> order = split.train;

    for (int epoch = 0; epoch < tc.epochs; ++epoch) {
        Rng shuffle_rng(tc.seed, 0x45504f43u /*EPOC*/, static_cast<std::uint64_t>(epoch));
        for (std::size_t i = order.size() - 1; i > 0; --i) {
            const std::size_t j =
                static_cast<std::size_t>(shuffle_rng.uniform_int(0, static_cast<std::int64_t>(i)));
            std::swap(order[i], order[j]);
        }
        double loss_sum = 0.0;
        std::size_t batch_count = 0;
        for (std::size_t lo = 0; lo < order.size(); lo += static_cast<std::size_t>(tc.batch)) {
            const std::size_t hi = std::min(order.size(), lo + static_cast<std::size_t>(tc.batch));
            model.reseed_dropout(static_cast<std::uint64_t>(epoch) + 1, batch_count);
            Tensor<S> x = detail::gather_batch<S>(features, order, lo, hi, model.cfg.bin_count,
                                                  model.cfg.slot_count);
            std::vector<int> y;
            y.reserve(hi - lo);
            for (std::size_t i = lo; i < hi; ++i) y.push_back(labels[static_cast<std::size_t>(order[i])]);
            try {
                Tensor<S> logits = model.forward(x, true);
                Tensor<S> loss = softmax_cross_entropy(logits, y);
                loss_sum += static_cast<double>(loss.value()[0]);
                loss.backward();
                opt.step();
            } catch (const NumericError& e) {
                throw NumericError("epoch " + std::to_string(epoch) + " batch " +
                                   std::to_string(batch_count) + ": " + e.what());
            }
            ++batch_count;
        }
        const double val_acc = accuracy_on(model, features, labels, split.val, tc.batch);
        EpochStats st;
        st.epoch = epoch;
        st.train_loss = loss_sum / static_cast<double>(std::max<std::size_t>(batch_count, 1));
        st.val_acc = val_acc;
        result.history.push_back(st);
        if (result.best_epoch < 0 || val_acc > result.best_val_acc) {
            result.best_val_acc = val_acc;
            result.best_epoch = epoch;
            best_state = model.state_buffers();
        }
    }
    model.load_state(best_state);
    return result;
}

// ----- metrics --------------------------------------------------------------------

inline double closed_world_accuracy(const std::vector<Prediction>& preds, const std::vector<int>& labels) {
    if (preds.size() != labels.size() || preds.empty())
        throw DataError("closed_world_accuracy: size mismatch or empty input");
    std::size_t correct = 0;
    for (std::size_t i = 0; i < preds.size(); ++i)
        if (preds[i].argmax == labels[i]) ++correct;
    return static_cast<double>(correct) / static_cast<double>(preds.size());
}

struct OpenWorldCounts {
    std::int64_t tp = 0, wp = 0, fn = 0, fp = 0, tn = 0;
};

/// Open-world tally against monitored classes 0..C-1 (class C is
/// non-monitored). A trace is predicted monitored iff argmax < C and the top
/// confidence strictly exceeds tau.
inline OpenWorldCounts open_world_counts(const std::vector<Prediction>& preds,
                                         const std::vector<int>& labels, int monitored_classes,
                                         double tau) {
    if (preds.size() != labels.size()) throw DataError("open_world_counts: size mismatch");
    const int C = monitored_classes;
    OpenWorldCounts c;
    for (std::size_t i = 0; i < preds.size(); ++i) {
        if (labels[i] < 0 || labels[i] > C) throw DataError("open_world_counts: label out of range");
        const bool positive = preds[i].argmax < C && preds[i].confidence > tau;
        if (labels[i] < C) {
            if (positive && preds[i].argmax == labels[i])
                ++c.tp;
            else if (positive)
                ++c.wp;
            else
                ++c.fn;
        } else {
            if (positive)
                ++c.fp;
            else
                ++c.tn;
        }
    }
    return c;
}

struct PrPoint {
    double tau = 0.0;
    OpenWorldCounts counts;
    std::optional<double> precision; // absent when zero positives
    double recall = 0.0;
    std::optional<double> f1;
};

struct EvalReport {
    double accuracy = 0.0; // closed-world accuracy over the prediction set
    std::vector<PrPoint> points;
    double best_f1 = 0.0;
    std::optional<double> best_tau;
    int fold = -1;
};

inline std::vector<double> tau_grid(int points = 101) {
    if (points < 2) throw ConfigError("tau grid needs at least 2 points");
    std::vector<double> grid(static_cast<std::size_t>(points));
    for (int i = 0; i < points; ++i)
        grid[static_cast<std::size_t>(i)] = static_cast<double>(i) / static_cast<double>(points - 1);
    return grid;
}

/// Precision/recall sweep. precision = TP/(TP+WP+FP), recall = TP/(TP+WP+FN);
/// zero-positive thresholds are kept as skipped points (no precision/F1).
inline EvalReport pr_curve(const std::vector<Prediction>& preds, const std::vector<int>& labels,
                           int monitored_classes, const std::vector<double>& grid) {
    if (grid.size() < 2) throw ConfigError("pr_curve: grid of >= 2 thresholds required");
    std::int64_t monitored = 0;
    for (int l : labels)
        if (l < monitored_classes) ++monitored;
    if (monitored == 0) throw DataError("pr_curve: no monitored traces in the test set");

    EvalReport report;
    std::size_t correct = 0;
    for (std::size_t i = 0; i < preds.size(); ++i)
        if (preds[i].argmax == labels[i]) ++correct;
    report.accuracy = static_cast<double>(correct) / static_cast<double>(preds.size());

    for (double tau : grid) {
        PrPoint pt;
        pt.tau = tau;
        pt.counts = open_world_counts(preds, labels, monitored_classes, tau);
        const auto& c = pt.counts;
        pt.recall = static_cast<double>(c.tp) / static_cast<double>(c.tp + c.wp + c.fn);
        if (c.tp + c.wp + c.fp > 0) {
            pt.precision = static_cast<double>(c.tp) / static_cast<double>(c.tp + c.wp + c.fp);
            const double p = *pt.precision, r = pt.recall;
            pt.f1 = (p + r > 0.0) ? 2.0 * p * r / (p + r) : 0.0;
            if (!report.best_tau || *pt.f1 > report.best_f1) {
                report.best_f1 = *pt.f1;
                report.best_tau = tau;
            }
        }
        report.points.push_back(pt);
    }
    return report;
}

// ----- CSV output -------------------------------------------------------------------

inline std::string format_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return buf;
}

inline std::string pr_curve_csv(const EvalReport& report) {
    std::string out = "tau,tp,wp,fn,fp,precision,recall,f1\n";
    for (const PrPoint& p : report.points) {
        out += format_double(p.tau) + "," + std::to_string(p.counts.tp) + "," +
               std::to_string(p.counts.wp) + "," + std::to_string(p.counts.fn) + "," +
               std::to_string(p.counts.fp) + ",";
        out += p.precision ? format_double(*p.precision) : std::string("NA");
        out += "," + format_double(p.recall) + ",";
        out += p.f1 ? format_double(*p.f1) : std::string("NA");
        out += "\n";
    }
    return out;
}

inline std::string history_csv(const std::vector<EpochStats>& history) {
    std::string out = "epoch,train_loss,val_acc\n";
    for (const EpochStats& e : history)
        out += std::to_string(e.epoch) + "," + format_double(e.train_loss) + "," +
               format_double(e.val_acc) + "\n";
    return out;
}

// ----- independent oracle ------------------------------------------------------------

/// Nearest-centroid classifier on raw feature vectors: per-class mean over
/// the train split, L2 nearest on the eval split. Used as an independent
/// sanity bar for the learned model.
inline double nearest_centroid_accuracy(const std::vector<FeatureTensor>& features,
                                        const std::vector<int>& labels,
                                        const std::vector<int>& train_idx,
                                        const std::vector<int>& eval_idx) {
    if (train_idx.empty() || eval_idx.empty()) throw DataError("nearest_centroid: empty split");
    const std::size_t dim = features[static_cast<std::size_t>(train_idx[0])].data.size();
    std::map<int, std::vector<double>> centroid;
    std::map<int, std::int64_t> count;
    for (int i : train_idx) {
        const FeatureTensor& f = features[static_cast<std::size_t>(i)];
        if (f.data.size() != dim) throw ShapeError("nearest_centroid: inconsistent feature sizes");
        auto& c = centroid[labels[static_cast<std::size_t>(i)]];
        if (c.empty()) c.assign(dim, 0.0);
        for (std::size_t d = 0; d < dim; ++d) c[d] += static_cast<double>(f.data[d]);
        ++count[labels[static_cast<std::size_t>(i)]];
    }
    for (auto& [cls, c] : centroid)
        for (double& x : c) x /= static_cast<double>(count[cls]);
    std::size_t correct = 0;
    for (int i : eval_idx) {
        const FeatureTensor& f = features[static_cast<std::size_t>(i)];
        double best = std::numeric_limits<double>::infinity();
        int best_cls = -1;
        for (const auto& [cls, c] : centroid) {
            double d2 = 0.0;
            for (std::size_t d = 0; d < dim; ++d) {
                const double diff = static_cast<double>(f.data[d]) - c[d];
                d2 += diff * diff;
            }
            if (d2 < best) {
                best = d2;
                best_cls = cls;
            }
        }
        if (best_cls == labels[static_cast<std::size_t>(i)]) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(eval_idx.size());
}

/// Adam moments and step counter as checkpoint buffers (the "WFO1" section).
template <typename S>
std::vector<NamedBuffer> optimizer_buffers(const Adam<S>& opt) {
    std::vector<NamedBuffer> out;
    for (const Parameter<S>* p : opt.params()) {
        if (!p->trainable) continue;
        NamedBuffer m{p->name + ".m", p->tensor.shape(), {}};
        for (double x : p->m) m.data.push_back(static_cast<float>(x));
        NamedBuffer v{p->name + ".v", p->tensor.shape(), {}};
        for (double x : p->v) v.data.push_back(static_cast<float>(x));
        out.push_back(std::move(m));
        out.push_back(std::move(v));
    }
    NamedBuffer t{"adam.t", {1}, {static_cast<float>(opt.step_count())}};
    out.push_back(std::move(t));
    return out;
}

} // namespace wfkit
