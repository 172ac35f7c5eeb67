#include "tseg/training.hpp"

#include <cmath>
#include <numeric>

#include "tseg/errors.hpp"

namespace tseg {

void TrainConfig::validate() const {
    if (batch_slices < 1) throw ConfigError("batch_slices must be >= 1");
    if (epochs < 1) throw ConfigError("epochs must be >= 1");
    if (!(lr0 > 0)) throw ConfigError("lr0 must be > 0");
    if (lr_halving_period < 1)
        throw ConfigError("lr_halving_period must be >= 1");
    if (tversky_alpha < 0 || tversky_beta < 0)
        throw ConfigError("tversky weights must be >= 0");
    if (!(loss_eps >= 0)) throw ConfigError("loss_eps must be >= 0");
    if (!(adam_beta1 >= 0 && adam_beta1 < 1) ||
        !(adam_beta2 >= 0 && adam_beta2 < 1))
        throw ConfigError("adam betas must be in [0,1)");
    if (!(adam_eps > 0)) throw ConfigError("adam_eps must be > 0");
}

double lr_at(int64_t epoch, const TrainConfig& cfg) {
    return cfg.lr0 * std::exp2(-double(epoch / cfg.lr_halving_period));
}

void adam_step(ModelParams& params, AdamState& st, const TrainConfig& cfg,
               double lr) {
    ++st.t;
    const double bc1 = 1.0 - std::pow(cfg.adam_beta1, double(st.t));
    const double bc2 = 1.0 - std::pow(cfg.adam_beta2, double(st.t));
    for (auto& [name, p] : params.params) {
        if (!p.trainable) continue;
        AdamState::Moments& mo = st.slots[name];
        if (mo.m.empty()) {
            mo.m.assign(size_t(p.value.numel()), 0.0);
            mo.v.assign(size_t(p.value.numel()), 0.0);
        }
        for (int64_t i = 0; i < p.value.numel(); ++i) {
            const double g = double(p.grad[i]);
            mo.m[size_t(i)] =
                cfg.adam_beta1 * mo.m[size_t(i)] + (1.0 - cfg.adam_beta1) * g;
            mo.v[size_t(i)] = cfg.adam_beta2 * mo.v[size_t(i)] +
                              (1.0 - cfg.adam_beta2) * g * g;
            const double mhat = mo.m[size_t(i)] / bc1;
            const double vhat = mo.v[size_t(i)] / bc2;
            p.value[i] = float(double(p.value[i]) -
                               lr * mhat / (std::sqrt(vhat) + cfg.adam_eps));
        }
    }
}

namespace {

// Reverse along width (mirror == true) and/or height of one [c,h,w] block.
void flip_block(float* d, int64_t c, int64_t h, int64_t w, bool fh, bool fv) {
    if (!fh && !fv) return;
    for (int64_t ch = 0; ch < c; ++ch) {
        float* pl = d + ch * h * w;
        if (fh)
            for (int64_t y = 0; y < h; ++y) {
                float* row = pl + y * w;
                for (int64_t a = 0, b = w - 1; a < b; ++a, --b)
                    std::swap(row[a], row[b]);
            }
        if (fv)
            for (int64_t ya = 0, yb = h - 1; ya < yb; ++ya, --yb)
                for (int64_t x = 0; x < w; ++x)
                    std::swap(pl[ya * w + x], pl[yb * w + x]);
    }
}

} // namespace

void augment_batch(Tensor<float>& x, Tensor<float>& wt, Tensor<float>& et,
                   Tensor<float>& net, Rng& rng) {
    const Shape4 s = x.shape();
    for (int64_t n = 0; n < s.n; ++n) {
        const bool h = rng.next_bool();
        const bool v = rng.next_bool();
        const bool r = rng.next_bool(); // 180 degrees == hflip + vflip
        const bool fh = h != r, fv = v != r;
        flip_block(x.data() + n * s.c * s.h * s.w, s.c, s.h, s.w, fh, fv);
        for (Tensor<float>* t : {&wt, &et, &net})
            flip_block(t->data() + n * s.h * s.w, 1, s.h, s.w, fh, fv);
    }
}

TrainResult train(const SliceDataset& data, const TrainConfig& cfg,
                  const NetworkConfig& netcfg,
                  const std::function<void(int64_t, double)>& on_epoch) {
    cfg.validate();
    if (data.count == 0) throw DataError("training dataset is empty");
    if (data.h != netcfg.input_height || data.w != netcfg.input_width)
        throw DataError("dataset slices are " + std::to_string(data.h) + "x" +
                        std::to_string(data.w) + ", network expects " +
                        std::to_string(netcfg.input_height) + "x" +
                        std::to_string(netcfg.input_width));

    TrainResult res;
    res.params = build_network(netcfg, cfg.seed);
    AdamState opt;
    auto shuffle_rng = Rng::substream(cfg.seed, "shuffle");
    auto aug_rng = Rng::substream(cfg.seed, "augment");

    std::vector<int64_t> order(size_t(data.count));
    std::iota(order.begin(), order.end(), int64_t(0));
    const int64_t hw = data.slice_pixels();

    struct BranchPass {
        BranchId id;
        Tensor<float>* target;
    };

    for (int64_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        shuffle_rng.shuffle(order);
        double epoch_sum = 0.0;
        int64_t batches = 0;
        for (int64_t start = 0; start < data.count;
             start += cfg.batch_slices, ++batches) {
            const int64_t bn =
                std::min(cfg.batch_slices, data.count - start);
            Tensor<float> x({bn, 4, data.h, data.w});
            Tensor<float> twt({bn, 1, data.h, data.w});
            Tensor<float> tet({bn, 1, data.h, data.w});
            Tensor<float> tnet({bn, 1, data.h, data.w});
#pragma omp parallel for schedule(static)
            for (int64_t i = 0; i < bn; ++i) {
                const int64_t src = order[size_t(start + i)];
                data.fetch(src, x.data() + i * 4 * hw);
                branch_masks(data.label(src), hw, twt.data() + i * hw,
                             tet.data() + i * hw, tnet.data() + i * hw);
            }
            if (cfg.augment) augment_batch(x, twt, tet, tnet, aug_rng);

            res.params.zero_grads();
            double batch_loss = 0.0;
            const BranchPass passes[] = {{BranchId::WT, &twt},
                                         {BranchId::ET, &tet},
                                         {BranchId::NET, &tnet}};
            const int64_t npass = netcfg.single_branch ? 1 : 3;
            try {
                for (int64_t bi = 0; bi < npass; ++bi) {
                    Tape<float> t(Mode::train, /*recording=*/true);
                    int xi = t.input(x);
                    FeNodes fe = build_fe(t, xi, res.params, netcfg,
                                          /*update_running=*/bi == 0);
                    int sig = build_branch(t, fe, passes[bi].id, res.params,
                                           netcfg, /*drop_skips=*/true,
                                           /*update_running=*/true);
                    const int loss =
                        passes[bi].id == BranchId::WT
                            ? t.dice_loss(sig, *passes[bi].target,
                                          float(cfg.loss_eps))
                            : t.tversky_loss(sig, *passes[bi].target,
                                             float(cfg.tversky_alpha),
                                             float(cfg.tversky_beta),
                                             float(cfg.loss_eps));
                    const double lv = double(t.scalar(loss));
                    if (!std::isfinite(lv))
                        throw NumericError("non-finite loss");
                    batch_loss += lv;
                    t.backward(loss);
                }
            } catch (const NumericError& e) {
                throw TrainingError(std::string("diverged: ") + e.what(),
                                    int(epoch), int(batches));
            }
            adam_step(res.params, opt, cfg, lr_at(epoch, cfg));
            epoch_sum += batch_loss;
        }
        res.epoch_loss.push_back(epoch_sum / double(batches));
        if (on_epoch) on_epoch(epoch, res.epoch_loss.back());
    }
    return res;
}

} // namespace tseg
