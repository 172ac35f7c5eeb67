#include <omp.h>

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "tseg/dataio.hpp"
#include "tseg/metrics.hpp"
#include "tseg/network.hpp"
#include "tseg/postprocess.hpp"
#include "tseg/tape.hpp"
#include "tseg/training.hpp"

using namespace tseg;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

// ---- logging (stderr, no timestamps; level via TSEG_LOG) ----

int log_level() {
    static const int lvl = [] {
        const char* e = std::getenv("TSEG_LOG");
        if (!e) return 1;
        const std::string s(e);
        if (s == "quiet") return 0;
        if (s == "debug") return 2;
        return 1;
    }();
    return lvl;
}

template <typename... Args>
void log_info(Args&&... args) {
    if (log_level() < 1) return;
    std::cerr << "[tseg] ";
    (std::cerr << ... << args) << '\n';
}

// ---- run configuration: CLI flag > config file > default ----

struct RunConfig {
    TrainConfig train;
    CropSpec crop;
    NetworkConfig net;
};

void check_keys(const json& j, const std::set<std::string>& allowed,
                const std::string& where) {
    for (const auto& [k, v] : j.items())
        if (!allowed.count(k))
            throw ConfigError("unknown config key \"" + k + "\" in " + where);
}

template <typename T>
void maybe(const json& j, const char* key, T& into) {
    if (j.contains(key)) into = j.at(key).get<T>();
}

RunConfig load_config(const std::string& path) {
    RunConfig rc;
    if (path.empty()) return rc;
    std::ifstream f(path);
    if (!f) throw DataError("cannot open config " + path);
    json j;
    try {
        j = json::parse(f);
    } catch (const json::exception& e) {
        throw ConfigError("config " + path + ": " + e.what());
    }
    check_keys(j, {"train", "crop", "network"}, "top level");
    if (j.contains("train")) {
        const json& t = j["train"];
        check_keys(t,
                   {"batch_slices", "epochs", "lr0", "lr_halving_period",
                    "tversky_alpha", "tversky_beta", "loss_eps", "adam_beta1",
                    "adam_beta2", "adam_eps", "seed", "augment"},
                   "train");
        maybe(t, "batch_slices", rc.train.batch_slices);
        maybe(t, "epochs", rc.train.epochs);
        maybe(t, "lr0", rc.train.lr0);
        maybe(t, "lr_halving_period", rc.train.lr_halving_period);
        maybe(t, "tversky_alpha", rc.train.tversky_alpha);
        maybe(t, "tversky_beta", rc.train.tversky_beta);
        maybe(t, "loss_eps", rc.train.loss_eps);
        maybe(t, "adam_beta1", rc.train.adam_beta1);
        maybe(t, "adam_beta2", rc.train.adam_beta2);
        maybe(t, "adam_eps", rc.train.adam_eps);
        maybe(t, "seed", rc.train.seed);
        maybe(t, "augment", rc.train.augment);
    }
    if (j.contains("crop")) {
        const json& c = j["crop"];
        check_keys(c,
                   {"row_offset", "row_len", "col_offset", "col_len",
                    "slice_front_trim", "slice_back_trim"},
                   "crop");
        maybe(c, "row_offset", rc.crop.row_offset);
        maybe(c, "row_len", rc.crop.row_len);
        maybe(c, "col_offset", rc.crop.col_offset);
        maybe(c, "col_len", rc.crop.col_len);
        maybe(c, "slice_front_trim", rc.crop.slice_front_trim);
        maybe(c, "slice_back_trim", rc.crop.slice_back_trim);
    }
    if (j.contains("network")) {
        const json& n = j["network"];
        check_keys(n,
                   {"single_path_fe", "single_branch", "additive_modulation"},
                   "network");
        maybe(n, "single_path_fe", rc.net.single_path_fe);
        maybe(n, "single_branch", rc.net.single_branch);
        maybe(n, "additive_modulation", rc.net.additive_modulation);
    }
    return rc;
}

json effective_json(const RunConfig& rc) {
    json j;
    j["train"] = {{"batch_slices", rc.train.batch_slices},
                  {"epochs", rc.train.epochs},
                  {"lr0", rc.train.lr0},
                  {"lr_halving_period", rc.train.lr_halving_period},
                  {"tversky_alpha", rc.train.tversky_alpha},
                  {"tversky_beta", rc.train.tversky_beta},
                  {"loss_eps", rc.train.loss_eps},
                  {"adam_beta1", rc.train.adam_beta1},
                  {"adam_beta2", rc.train.adam_beta2},
                  {"adam_eps", rc.train.adam_eps},
                  {"seed", rc.train.seed},
                  {"augment", rc.train.augment}};
    j["crop"] = {{"row_offset", rc.crop.row_offset},
                 {"row_len", rc.crop.row_len},
                 {"col_offset", rc.crop.col_offset},
                 {"col_len", rc.crop.col_len},
                 {"slice_front_trim", rc.crop.slice_front_trim},
                 {"slice_back_trim", rc.crop.slice_back_trim}};
    j["network"] = {{"single_path_fe", rc.net.single_path_fe},
                    {"single_branch", rc.net.single_branch},
                    {"additive_modulation", rc.net.additive_modulation}};
    return j;
}

std::string config_hash(const RunConfig& rc) {
    const std::string s = effective_json(rc).dump();
    uint64_t h = 0xcbf29ce484222325ull; // FNV-1a
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    char buf[24];
    std::snprintf(buf, sizeof(buf), "%016llx", (unsigned long long)h);
    return buf;
}

void log_run(const char* cmd, const RunConfig& rc) {
    log_info(cmd, ": seed=", rc.train.seed, " config=fnv1a:",
             config_hash(rc));
}

// ---- paramcount ----

int cmd_paramcount(const RunConfig& rc, bool as_json, int64_t expect) {
    const ModelParams m = build_network(rc.net, 0);
    const std::vector<LayerCount> rows = count_parameters(m);
    int64_t total = 0, trainable = 0;
    for (const LayerCount& r : rows) {
        total += r.total;
        trainable += r.trainable;
    }
    if (as_json) {
        json j;
        j["layers"] = json::array();
        for (const LayerCount& r : rows)
            j["layers"].push_back({{"row", r.row},
                                   {"trainable", r.trainable},
                                   {"running", r.running},
                                   {"total", r.total}});
        j["total"] = total;
        j["trainable"] = trainable;
        j["expected"] = expect;
        j["match"] = total == expect;
        std::cout << j.dump(2) << '\n';
    } else {
        std::printf("%-6s %10s %8s %8s\n", "layer", "trainable", "running",
                    "total");
        for (const LayerCount& r : rows)
            std::printf("%-6s %10lld %8lld %8lld\n", r.row.c_str(),
                        (long long)r.trainable, (long long)r.running,
                        (long long)r.total);
        std::printf("%-6s %10lld %8lld %8lld\n", "total",
                    (long long)trainable, (long long)(total - trainable),
                    (long long)total);
    }
    if (total != expect) {
        std::cerr << "parameter count " << total << " != expected " << expect
                  << '\n';
        return 4;
    }
    return 0;
}

// ---- synth ----

void cmd_synth(const std::string& out_dir, int64_t n, uint64_t seed,
               bool tumor_free) {
    // one case at a time: bundles are ~150 MB each
    for (int64_t i = 0; i < n; ++i) {
        const CaseBundle cb = make_phantom_case(seed, i, tumor_free);
        write_case(out_dir, cb);
        log_info("synth: wrote ", cb.case_id);
    }
}

// ---- train ----

std::vector<std::string> select_cases(const std::string& dir,
                                      std::vector<std::string> wanted) {
    std::vector<std::string> all = list_cases(dir);
    if (wanted.empty()) return all;
    for (const std::string& w : wanted)
        if (std::find(all.begin(), all.end(), w) == all.end())
            throw DataError("case " + w + " not found under " + dir);
    return wanted;
}

void cmd_train(const std::string& data_dir, const std::string& out_model,
               const std::string& history_path,
               const std::vector<std::string>& cases, const RunConfig& rc) {
    log_run("train", rc);
    const std::vector<std::string> ids = select_cases(data_dir, cases);
    if (ids.empty()) throw DataError("no cases under " + data_dir);

    SliceDataset ds(rc.crop.row_len, rc.crop.col_len);
    for (const std::string& id : ids) {
        const CaseBundle c =
            preprocess_case(read_case(data_dir, id, true), rc.crop);
        append_case(ds, c);
        log_info("train: loaded ", id, " (", ds.count, " slices)");
    }

    const TrainResult res =
        train(ds, rc.train, rc.net, [&](int64_t epoch, double loss) {
            log_info("train: epoch ", epoch, " mean loss ", loss, " lr ",
                     lr_at(epoch, rc.train));
        });
    save_model(res.params, out_model);
    log_info("train: saved ", out_model);

    if (!history_path.empty()) {
        json j;
        j["epoch_loss"] = res.epoch_loss;
        j["config"] = effective_json(rc);
        const std::string tmp = history_path + ".tmp";
        std::ofstream f(tmp, std::ios::trunc);
        if (!f) throw DataError("cannot write " + tmp);
        f << j.dump(2) << '\n';
        f.close();
        if (!f || std::rename(tmp.c_str(), history_path.c_str()) != 0)
            throw DataError("cannot finalize " + history_path);
    }
}

// ---- predict ----

void predict_case(ModelParams& m, const std::string& data_dir,
                  const std::string& id, const std::string& out_dir,
                  int64_t chunk, const RunConfig& rc) {
    const CaseBundle raw = read_case(data_dir, id, false);
    const int64_t nat_dz = raw.flair.dz, nat_dy = raw.flair.dy,
                  nat_dx = raw.flair.dx;
    const CaseBundle pre = preprocess_case(raw, rc.crop);
    const int64_t dz = pre.flair.dz, h = pre.flair.dy, w = pre.flair.dx;

    Volume wt(dz, h, w), et(dz, h, w), net(dz, h, w);
    const Volume* mods[4] = {&pre.flair, &pre.t2, &pre.t1ce, &pre.t1};
    for (int64_t z0 = 0; z0 < dz; z0 += chunk) {
        const int64_t n = std::min(chunk, dz - z0);
        Tensor<float> batch(Shape4{n, 4, h, w});
        for (int64_t i = 0; i < n; ++i)
            for (int64_t c = 0; c < 4; ++c)
                std::memcpy(&batch.at(i, c, 0, 0),
                            &mods[c]->at(z0 + i, 0, 0),
                            size_t(h * w) * sizeof(float));
        BranchOutputs out = forward(m, batch, rc.net, Mode::infer);
        for (int64_t i = 0; i < n; ++i) {
            std::memcpy(&wt.at(z0 + i, 0, 0), &out.wt.at(i, 0, 0, 0),
                        size_t(h * w) * sizeof(float));
            std::memcpy(&et.at(z0 + i, 0, 0), &out.et.at(i, 0, 0, 0),
                        size_t(h * w) * sizeof(float));
            std::memcpy(&net.at(z0 + i, 0, 0), &out.net.at(i, 0, 0, 0),
                        size_t(h * w) * sizeof(float));
        }
    }

    const LabelVolume fused = fuse_branches(wt, et, net);
    LabelVolume refined = refine_et(fused);
    refined.sz = pre.flair.sz;
    refined.sy = pre.flair.sy;
    refined.sx = pre.flair.sx;
    const LabelVolume native =
        embed_prediction(refined, rc.crop, nat_dz, nat_dy, nat_dx);
    write_nifti(out_dir + "/" + id + "_pred.nii.gz", native);
    log_info("predict: wrote ", id, "_pred.nii.gz");
}

void cmd_predict(const std::string& model_path, const std::string& data_dir,
                 const std::vector<std::string>& cases,
                 const std::string& out_dir, int64_t chunk,
                 const RunConfig& rc) {
    log_run("predict", rc);
    if (chunk < 1) throw ConfigError("--chunk must be >= 1");
    ModelParams m = load_model(model_path);
    validate_params(m, rc.net);
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) throw DataError("cannot create " + out_dir + ": " + ec.message());
    for (const std::string& id : select_cases(data_dir, cases))
        predict_case(m, data_dir, id, out_dir, chunk, rc);
}

// ---- evaluate ----

std::string pred_path_for(const std::string& pred_dir,
                          const std::string& id) {
    for (const char* ext : {".nii.gz", ".nii"}) {
        const std::string p = pred_dir + "/" + id + "_pred" + ext;
        if (fs::exists(p)) return p;
    }
    throw DataError("no prediction for case " + id + " under " + pred_dir);
}

void cmd_evaluate(const std::string& pred_dir, const std::string& truth_dir,
                  const std::vector<std::string>& cases,
                  const std::string& report_path, const std::string& csv_path,
                  const RunConfig& rc) {
    log_run("evaluate", rc);
    std::vector<CaseReport> reports;
    for (const std::string& id : select_cases(truth_dir, cases)) {
        std::string seg;
        for (const char* ext : {".nii.gz", ".nii"}) {
            const std::string p =
                truth_dir + "/" + id + "/" + id + "_seg" + ext;
            if (fs::exists(p)) seg = p;
        }
        if (seg.empty()) throw DataError("case " + id + " has no labels");
        const LabelVolume truth = read_nifti_labels(seg);
        const LabelVolume pred = read_nifti_labels(pred_path_for(pred_dir, id));
        CaseReport r = evaluate_case(
            pred, truth, Spacing{truth.sz, truth.sy, truth.sx});
        r.case_id = id;
        log_info("evaluate: ", id, " dice et/wt/tc ", r.et.dice, "/",
                 r.wt.dice, "/", r.tc.dice);
        reports.push_back(std::move(r));
    }
    if (reports.empty()) throw DataError("no cases under " + truth_dir);

    const AggregateReport agg = aggregate(reports);
    write_report_json(report_path, reports, agg);
    if (!csv_path.empty()) write_report_csv(csv_path, reports);
    std::printf("cases %lld  dice mean et %.4f wt %.4f tc %.4f\n",
                (long long)agg.cases, agg.et.dice.mean, agg.wt.dice.mean,
                agg.tc.dice.mean);
}

// ---- gradcheck: central finite differences vs tape gradients, in double ----

Tensor<double> draw(Rng& rng, Shape4 s, double lo = -2.0, double hi = 2.0) {
    Tensor<double> t(s);
    for (int64_t i = 0; i < s.numel(); ++i)
        t.data()[i] = rng.uniform(lo, hi);
    return t;
}

// keep ReLU/pool kinks away from the FD step
void nudge_kinks(Tensor<double>& t) {
    for (int64_t i = 0; i < t.numel(); ++i)
        if (std::abs(t.data()[i]) < 1e-3)
            t.data()[i] += t.data()[i] < 0 ? -2e-3 : 2e-3;
}

struct FdCheck {
    std::string name;
    double worst = 0.0;
};

// loss(tensors) evaluated on a fresh tape each call
template <typename BuildFn>
FdCheck run_fd(const char* name, std::vector<Tensor<double>> inputs,
               BuildFn build) {
    FdCheck res{name, 0.0};
    const double h = 1e-5;

    Tape<double> t;
    std::vector<int> ids;
    for (auto& x : inputs) ids.push_back(t.input(x, true));
    const int loss = build(t, ids);
    t.backward(loss);

    for (size_t li = 0; li < inputs.size(); ++li) {
        const Tensor<double>& g = t.grad(ids[li]);
        const int64_t n = inputs[li].numel();
        const int64_t stride = std::max<int64_t>(1, n / 40);
        for (int64_t i = 0; i < n; i += stride) {
            auto eval_at = [&](double v) {
                std::vector<Tensor<double>> moved = inputs;
                moved[li].data()[i] = v;
                Tape<double> tt;
                std::vector<int> tids;
                for (auto& x : moved) tids.push_back(tt.input(x, false));
                return tt.scalar(build(tt, tids));
            };
            const double x0 = inputs[li].data()[i];
            const double fd = (eval_at(x0 + h) - eval_at(x0 - h)) / (2 * h);
            const double a = g.data()[i];
            const double rel = std::abs(fd - a) /
                               std::max({1e-8, std::abs(fd), std::abs(a)});
            res.worst = std::max(res.worst, rel);
        }
    }
    return res;
}

// conv+bn with gradients on the weights themselves: Parameters must outlive
// the tape, so this check is built by hand rather than through run_fd
FdCheck check_conv_bn_params(Rng& rng) {
    FdCheck res{"conv-bn(x,w,b,g,beta)", 0.0};
    const double h = 1e-5;
    const int64_t co = 4;
    Tensor<double> x = draw(rng, {2, 3, 6, 5});
    Tensor<double> w = draw(rng, {co, 3, 3, 3}, -0.5, 0.5);
    Tensor<double> b = draw(rng, {co, 1, 1, 1}, -0.5, 0.5);
    Tensor<double> gm = draw(rng, {co, 1, 1, 1}, 0.5, 1.5);
    Tensor<double> bt = draw(rng, {co, 1, 1, 1}, -0.5, 0.5);
    const Tensor<double> proj = draw(rng, {2, co, 6, 5});
    // second projection taps the raw conv output: batchnorm is invariant to
    // the conv bias, so without it the bias gradient would be degenerately 0
    const Tensor<double> proj2 = draw(rng, {2, co, 6, 5});

    Tensor<double> rv1({co, 1, 1, 1});
    for (int64_t i = 0; i < co; ++i) rv1.data()[i] = 1.0;

    struct Graph {
        Parameter<double> wp, bp, gp, tp, rm, rv;
        Tape<double> t;
        int xid, loss;
        Graph(const Tensor<double>& x, const Tensor<double>& w,
              const Tensor<double>& b, const Tensor<double>& g,
              const Tensor<double>& bt, const Tensor<double>& rv1,
              const Tensor<double>& proj, const Tensor<double>& proj2)
            : wp(w), bp(b), gp(g), tp(bt),
              rm(Tensor<double>({w.shape().n, 1, 1, 1}), false),
              rv(rv1, false) {
            xid = t.input(x, true);
            const int c = t.conv2d(xid, wp, bp, 3);
            const int y =
                t.batchnorm(c, gp, tp, rm, rv, 1e-3, 0.01, false);
            loss = t.add(t.sum(t.mul(y, t.input(proj))),
                         t.sum(t.mul(c, t.input(proj2))));
        }
    };

    Graph g0(x, w, b, gm, bt, rv1, proj, proj2);
    g0.t.backward(g0.loss);

    Tensor<double>* stores[5] = {&x, &w, &b, &gm, &bt};
    const Tensor<double>* grads[5] = {&g0.t.grad(g0.xid), &g0.wp.grad,
                                      &g0.bp.grad, &g0.gp.grad, &g0.tp.grad};
    for (int pi = 0; pi < 5; ++pi) {
        const int64_t n = stores[pi]->numel();
        const int64_t stride = std::max<int64_t>(1, n / 40);
        for (int64_t i = 0; i < n; i += stride) {
            const double x0 = stores[pi]->data()[i];
            auto eval_at = [&](double v) {
                stores[pi]->data()[i] = v;
                Graph g(x, w, b, gm, bt, rv1, proj, proj2);
                stores[pi]->data()[i] = x0;
                return g.t.scalar(g.loss);
            };
            const double fd = (eval_at(x0 + h) - eval_at(x0 - h)) / (2 * h);
            const double a = grads[pi]->data()[i];
            const double rel = std::abs(fd - a) /
                               std::max({1e-8, std::abs(fd), std::abs(a)});
            res.worst = std::max(res.worst, rel);
        }
    }
    return res;
}

int cmd_gradcheck(uint64_t seed) {
    auto rng = Rng::substream(seed, "gradcheck");
    std::vector<FdCheck> checks;

    checks.push_back(check_conv_bn_params(rng));
    {
        Tensor<double> x = draw(rng, {2, 3, 8, 8});
        nudge_kinks(x);
        Tensor<double> proj = draw(rng, {2, 3, 8, 8});
        checks.push_back(run_fd(
            "relu-pool-upsample", {x},
            [proj](Tape<double>& t, std::vector<int>& v) {
                const int y = t.upsample2(t.maxpool2(t.relu(v[0])));
                return t.sum(t.mul(y, t.input(proj)));
            }));
    }
    {
        Tensor<double> a = draw(rng, {2, 4, 3, 3});
        Tensor<double> b = draw(rng, {2, 4, 3, 3});
        Tensor<double> proj = draw(rng, {2, 6, 3, 3});
        checks.push_back(run_fd(
            "mul-concat-slice", {a, b},
            [proj](Tape<double>& t, std::vector<int>& v) {
                const int m = t.mul(v[0], v[1]);
                const int c = t.concat({m, t.slice(v[1], 1, 2)});
                return t.sum(t.mul(c, t.input(proj)));
            }));
    }
    {
        Tensor<double> x = draw(rng, {2, 1, 5, 5});
        Tensor<double> tgt({2, 1, 5, 5});
        for (int64_t i = 0; i < tgt.numel(); ++i)
            tgt.data()[i] = rng.uniform(0, 1) < 0.4 ? 1.0 : 0.0;
        checks.push_back(
            run_fd("sigmoid-dice", {x}, [tgt](Tape<double>& t,
                                               std::vector<int>& v) {
                return t.dice_loss(t.sigmoid(v[0]), tgt, 1e-6);
            }));
        checks.push_back(run_fd(
            "sigmoid-tversky", {x}, [tgt](Tape<double>& t,
                                          std::vector<int>& v) {
                return t.tversky_loss(t.sigmoid(v[0]), tgt, 0.3, 0.7, 1e-6);
            }));
    }

    bool ok = true;
    for (const FdCheck& c : checks) {
        const bool pass = c.worst < 1e-4;
        ok = ok && pass;
        std::printf("gradcheck %-20s worst rel %.3e  %s\n", c.name.c_str(),
                    c.worst, pass ? "ok" : "FAIL");
    }
    return ok ? 0 : 4;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"multi-path CNN brain tumor segmentation pipeline"};
    app.require_subcommand(1);
    app.fallthrough(); // let --seed/--config/--threads follow the subcommand

    std::string config_path;
    uint64_t seed = 0;
    bool seed_set = false;
    int threads = 0;
    app.add_option("--config", config_path, "JSON config file")
        ->expected(1);
    app.add_option("--seed", seed, "master seed (overrides config)")
        ->each([&](const std::string&) { seed_set = true; });
    app.add_option("--threads", threads, "OpenMP thread count");

    auto* pc = app.add_subcommand("paramcount", "print the layer table");
    bool pc_json = false;
    int64_t pc_expect = 61843;
    pc->add_flag("--json", pc_json, "machine-readable output");
    pc->add_option("--expect-params", pc_expect, "expected total");

    auto* sy = app.add_subcommand("synth", "generate phantom cases");
    std::string sy_out;
    int64_t sy_n = 4;
    bool sy_tumor_free = false;
    sy->add_option("--out", sy_out, "output dataset dir")->required();
    sy->add_option("-n,--cases", sy_n, "number of cases");
    sy->add_flag("--tumor-free", sy_tumor_free, "no tumor, brain only");

    auto* tr = app.add_subcommand("train", "train a model");
    std::string tr_data, tr_out, tr_history;
    std::vector<std::string> tr_cases;
    int64_t tr_epochs = -1, tr_batch = -1;
    double tr_lr0 = -1;
    bool tr_no_augment = false;
    tr->add_option("--data", tr_data, "dataset dir")->required();
    tr->add_option("--out", tr_out, "output model path")->required();
    tr->add_option("--history", tr_history, "loss history JSON path");
    tr->add_option("--cases", tr_cases, "subset of case ids")
        ->delimiter(',');
    tr->add_option("--epochs", tr_epochs, "override epochs");
    tr->add_option("--batch", tr_batch, "override batch slices");
    tr->add_option("--lr0", tr_lr0, "override initial learning rate");
    tr->add_flag("--no-augment", tr_no_augment, "disable augmentation");

    auto* pr = app.add_subcommand("predict", "segment cases with a model");
    std::string pr_model, pr_data, pr_out;
    std::vector<std::string> pr_cases;
    int64_t pr_chunk = 8;
    pr->add_option("--model", pr_model, "model file")->required();
    pr->add_option("--data", pr_data, "dataset dir")->required();
    pr->add_option("--out", pr_out, "output dir")->required();
    pr->add_option("--cases", pr_cases, "subset of case ids")
        ->delimiter(',');
    pr->add_option("--chunk", pr_chunk, "slices per forward pass");

    auto* ev = app.add_subcommand("evaluate", "score predictions");
    std::string ev_pred, ev_truth, ev_report = "report.json", ev_csv;
    std::vector<std::string> ev_cases;
    ev->add_option("--pred", ev_pred, "prediction dir")->required();
    ev->add_option("--truth", ev_truth, "ground-truth dataset dir")
        ->required();
    ev->add_option("--cases", ev_cases, "subset of case ids")
        ->delimiter(',');
    ev->add_option("--report", ev_report, "JSON report path");
    ev->add_option("--csv", ev_csv, "CSV report path");

    auto* gc = app.add_subcommand("gradcheck",
                                  "finite-difference engine check");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 1;
    }

    try {
        RunConfig rc = load_config(config_path);
        if (seed_set) rc.train.seed = seed;
        if (threads > 0) omp_set_num_threads(threads);

        if (pc->parsed()) return cmd_paramcount(rc, pc_json, pc_expect);
        if (sy->parsed()) {
            log_run("synth", rc);
            cmd_synth(sy_out, sy_n, rc.train.seed, sy_tumor_free);
            return 0;
        }
        if (tr->parsed()) {
            if (tr_epochs >= 0) rc.train.epochs = tr_epochs;
            if (tr_batch >= 0) rc.train.batch_slices = tr_batch;
            if (tr_lr0 >= 0) rc.train.lr0 = tr_lr0;
            if (tr_no_augment) rc.train.augment = false;
            cmd_train(tr_data, tr_out, tr_history, tr_cases, rc);
            return 0;
        }
        if (pr->parsed()) {
            cmd_predict(pr_model, pr_data, pr_cases, pr_out, pr_chunk, rc);
            return 0;
        }
        if (ev->parsed()) {
            cmd_evaluate(ev_pred, ev_truth, ev_cases, ev_report, ev_csv, rc);
            return 0;
        }
        if (gc->parsed()) {
            log_run("gradcheck", rc);
            return cmd_gradcheck(rc.train.seed);
        }
        return 1;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return 1;
    } catch (const TrainingError& e) {
        std::cerr << "training error at epoch " << e.epoch << " batch "
                  << e.batch << ": " << e.what() << '\n';
        return 3;
    } catch (const NumericError& e) {
        std::cerr << "numeric error: " << e.what() << '\n';
        return 3;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << '\n';
        return 2;
    } catch (const FormatError& e) {
        std::cerr << "format error: " << e.what() << '\n';
        return 2;
    } catch (const DimensionError& e) {
        std::cerr << "dimension error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 3;
    }
}
