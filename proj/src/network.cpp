#include "tseg/network.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iterator>

#include "tseg/errors.hpp"
#include "tseg/rng.hpp"

namespace tseg {

const char* branch_name(BranchId b) {
    switch (b) {
        case BranchId::WT: return "wt";
        case BranchId::ET: return "et";
        case BranchId::NET: return "net";
    }
    throw ContractError("bad BranchId");
}

Parameter<float>& ModelParams::at(const std::string& name) {
    auto it = params.find(name);
    if (it == params.end()) throw ContractError("unknown parameter: " + name);
    return it->second;
}

const Parameter<float>& ModelParams::at(const std::string& name) const {
    auto it = params.find(name);
    if (it == params.end()) throw ContractError("unknown parameter: " + name);
    return it->second;
}

int64_t ModelParams::total_count() const {
    int64_t n = 0;
    for (const auto& [name, p] : params) n += p.value.numel();
    return n;
}

void ModelParams::zero_grads() {
    for (auto& [name, p] : params) p.zero_grad();
}

namespace {

void add_param(ModelParams& m, const std::string& name, Tensor<float> v,
               bool trainable = true) {
    if (!m.params.emplace(name, Parameter<float>(std::move(v), trainable))
             .second)
        throw ContractError("duplicate parameter: " + name);
}

void add_conv(ModelParams& m, const std::string& base, int64_t co, int64_t ci,
              int64_t k) {
    add_param(m, base + ".w", Tensor<float>({co, ci, k, k}));
    add_param(m, base + ".b", Tensor<float>({co, 1, 1, 1}));
}

void add_bn(ModelParams& m, const std::string& base, int64_t c) {
    add_param(m, base + ".gamma", Tensor<float>::full({c, 1, 1, 1}, 1.0f));
    add_param(m, base + ".beta", Tensor<float>({c, 1, 1, 1}));
    add_param(m, base + ".rmean", Tensor<float>({c, 1, 1, 1}), false);
    add_param(m, base + ".rvar", Tensor<float>::full({c, 1, 1, 1}, 1.0f),
              false);
}

// FE sub-paths in the frozen concatenation order: four mono paths in modality
// order (Flair, T2, T1ce, T1), two paired paths (Flair+T2, T1ce+T1), cross.
struct SubPathSpec {
    std::string base;
    int64_t in_channels;
    int64_t kernels;
};

std::vector<SubPathSpec> fe_paths(const NetworkConfig& cfg) {
    std::vector<SubPathSpec> out;
    if (!cfg.single_path_fe) {
        for (int i = 0; i < 4; ++i)
            out.push_back({"fe.mono." + std::to_string(i), 1, cfg.mono_kernels});
        for (int i = 0; i < 2; ++i)
            out.push_back(
                {"fe.paired." + std::to_string(i), 2, cfg.paired_kernels});
    }
    out.push_back({"fe.cross", 4, cfg.cross_kernels});
    return out;
}

std::vector<BranchId> branches(const NetworkConfig& cfg) {
    if (cfg.single_branch) return {BranchId::WT};
    return {BranchId::WT, BranchId::ET, BranchId::NET};
}

} // namespace

ModelParams build_network(const NetworkConfig& cfg, uint64_t seed) {
    ModelParams m;
    m.seed = seed;
    const int64_t K = cfg.skip_channels();

    for (const SubPathSpec& sp : fe_paths(cfg)) {
        int64_t ci = sp.in_channels;
        for (int level = 1; level <= 3; ++level) {
            const std::string L = std::to_string(level);
            add_conv(m, sp.base + ".conv" + L, sp.kernels, ci, 3);
            add_bn(m, sp.base + ".bn" + L, sp.kernels);
            ci = sp.kernels;
        }
    }

    add_conv(m, "bottleneck.conv1", cfg.bottleneck_kernels, K, 3);
    add_bn(m, "bottleneck.bn1", cfg.bottleneck_kernels);
    add_conv(m, "bottleneck.conv2", cfg.bottleneck_kernels,
             cfg.bottleneck_kernels, 3);
    add_bn(m, "bottleneck.bn2", cfg.bottleneck_kernels);

    const int64_t bk = cfg.branch_kernels;
    for (BranchId b : branches(cfg)) {
        const std::string base = std::string("branch.") + branch_name(b);
        for (int level = 1; level <= 2; ++level) {
            const std::string lv = base + ".level" + std::to_string(level);
            add_conv(m, lv + ".skip", bk, K, 1);
            add_conv(m, lv + ".conv1", bk, bk, 3);
            add_bn(m, lv + ".bn1", bk);
            add_conv(m, lv + ".conv2", bk, bk, 3);
            add_bn(m, lv + ".bn2", bk);
        }
        add_conv(m, base + ".level3.skip", bk, K, 1);
        add_conv(m, base + ".level3.conv1", bk, bk, 3);
        add_conv(m, base + ".level3.out", 1, bk, 1);
    }

    // he_uniform over conv weights only, drawn in lexicographic name order so
    // identical seeds give bitwise-identical models.
    auto rng = Rng::substream(seed, "he-uniform");
    for (auto& [name, p] : m.params) {
        if (!name.ends_with(".w")) continue;
        const Shape4 s = p.value.shape();
        const double bound = std::sqrt(6.0 / double(s.c * s.h * s.w));
        for (int64_t i = 0; i < p.value.numel(); ++i)
            p.value[i] = float(rng.uniform(-bound, bound));
    }
    return m;
}

FeNodes build_fe(Tape<float>& t, int x, ModelParams& m,
                 const NetworkConfig& cfg, bool update_running) {
    const std::vector<SubPathSpec> specs = fe_paths(cfg);
    std::vector<int> cur(specs.size());
    {
        size_t p = 0;
        if (!cfg.single_path_fe) {
            for (int i = 0; i < 4; ++i) cur[p++] = t.slice(x, i, 1);
            for (int i = 0; i < 2; ++i) cur[p++] = t.slice(x, 2 * i, 2);
        }
        cur[p] = x; // cross path sees all modalities
    }

    FeNodes fe;
    for (int level = 1; level <= 3; ++level) {
        const std::string L = std::to_string(level);
        std::vector<int> acts(specs.size());
        for (size_t p = 0; p < specs.size(); ++p) {
            const std::string& base = specs[p].base;
            int c = t.conv2d(cur[p], m.at(base + ".conv" + L + ".w"),
                             m.at(base + ".conv" + L + ".b"), 3);
            int bn = t.batchnorm(c, m.at(base + ".bn" + L + ".gamma"),
                                 m.at(base + ".bn" + L + ".beta"),
                                 m.at(base + ".bn" + L + ".rmean"),
                                 m.at(base + ".bn" + L + ".rvar"), cfg.bn_eps,
                                 cfg.bn_momentum, update_running);
            t.drop(c);
            acts[p] = t.relu(bn);
            t.drop(bn);
        }
        fe.skip[size_t(level - 1)] = t.concat(acts);
        for (size_t p = 0; p < specs.size(); ++p) {
            int pooled = t.maxpool2(acts[p]);
            if (level == 1 && cur[p] != x) t.drop(cur[p]); // modality slices
            t.drop(acts[p]); // concat holds the skip; backward recomputes
            cur[p] = pooled;
        }
    }

    int bin = t.concat(cur); // pooled 48ch at 25x21; kept, it anchors recomputes
    int c1 = t.conv2d(bin, m.at("bottleneck.conv1.w"),
                      m.at("bottleneck.conv1.b"), 3);
    int bn1 = t.batchnorm(c1, m.at("bottleneck.bn1.gamma"),
                          m.at("bottleneck.bn1.beta"),
                          m.at("bottleneck.bn1.rmean"),
                          m.at("bottleneck.bn1.rvar"), cfg.bn_eps,
                          cfg.bn_momentum, update_running);
    t.drop(c1);
    int r1 = t.relu(bn1);
    t.drop(bn1);
    int c2 = t.conv2d(r1, m.at("bottleneck.conv2.w"),
                      m.at("bottleneck.conv2.b"), 3);
    int bn2 = t.batchnorm(c2, m.at("bottleneck.bn2.gamma"),
                          m.at("bottleneck.bn2.beta"),
                          m.at("bottleneck.bn2.rmean"),
                          m.at("bottleneck.bn2.rvar"), cfg.bn_eps,
                          cfg.bn_momentum, update_running);
    t.drop(c2);
    t.drop(r1);
    fe.bottom = t.relu(bn2);
    t.drop(bn2);
    return fe;
}

int build_branch(Tape<float>& t, const FeNodes& fe, BranchId b, ModelParams& m,
                 const NetworkConfig& cfg, bool drop_skips,
                 bool update_running) {
    const std::string base = std::string("branch.") + branch_name(b);
    int cur = fe.bottom;
    for (int level = 1; level <= 3; ++level) {
        const std::string lv = base + ".level" + std::to_string(level);
        int up = t.upsample2(cur);
        int skip = fe.skip[size_t(3 - level)];
        int sc = t.conv2d(skip, m.at(lv + ".skip.w"), m.at(lv + ".skip.b"), 1);
        if (drop_skips) t.drop(skip);
        int mod = cfg.additive_modulation ? t.add(up, sc) : t.mul(up, sc);
        t.drop(up); // recomputed from `cur`, which stays live
        if (level < 3) {
            int c1 = t.conv2d(mod, m.at(lv + ".conv1.w"), m.at(lv + ".conv1.b"),
                              3);
            int bn1 = t.batchnorm(c1, m.at(lv + ".bn1.gamma"),
                                  m.at(lv + ".bn1.beta"),
                                  m.at(lv + ".bn1.rmean"),
                                  m.at(lv + ".bn1.rvar"), cfg.bn_eps,
                                  cfg.bn_momentum, update_running);
            t.drop(c1);
            int r1 = t.relu(bn1);
            t.drop(bn1);
            int c2 = t.conv2d(r1, m.at(lv + ".conv2.w"), m.at(lv + ".conv2.b"),
                              3);
            int bn2 = t.batchnorm(c2, m.at(lv + ".bn2.gamma"),
                                  m.at(lv + ".bn2.beta"),
                                  m.at(lv + ".bn2.rmean"),
                                  m.at(lv + ".bn2.rvar"), cfg.bn_eps,
                                  cfg.bn_momentum, update_running);
            t.drop(c2);
            cur = t.relu(bn2);
            t.drop(bn2);
        } else {
            int c1 = t.conv2d(mod, m.at(lv + ".conv1.w"), m.at(lv + ".conv1.b"),
                              3);
            int r = t.relu(c1); // final level: no batch norm
            t.drop(c1);
            int o = t.conv2d(r, m.at(lv + ".out.w"), m.at(lv + ".out.b"), 1);
            int sig = t.sigmoid(o);
            t.drop(o);
            return sig;
        }
    }
    throw ContractError("unreachable");
}

BranchOutputs forward(ModelParams& m, const Tensor<float>& batch,
                      const NetworkConfig& cfg, Mode mode) {
    const Shape4 s = batch.shape();
    if (s.c != 4 || s.h != cfg.input_height || s.w != cfg.input_width)
        throw DimensionError("forward expects [N,4," +
                             std::to_string(cfg.input_height) + "," +
                             std::to_string(cfg.input_width) + "], got " +
                             s.str());
    Tape<float> t(mode, /*recording=*/false);
    int x = t.input(batch);
    FeNodes fe = build_fe(t, x, m, cfg, /*update_running=*/false);
    BranchOutputs out;
    out.wt = t.out(build_branch(t, fe, BranchId::WT, m, cfg, false, false));
    if (!cfg.single_branch) {
        out.et = t.out(build_branch(t, fe, BranchId::ET, m, cfg, false, false));
        out.net =
            t.out(build_branch(t, fe, BranchId::NET, m, cfg, false, false));
    }
    return out;
}

namespace {

// Table-row key for a parameter name: FE levels -> "1".."3", bottleneck ->
// "4", branch levels -> "5"/"6"/"7", per-branch skip convs -> "SC1".."SC3".
std::string row_of(const std::string& name) {
    if (name.rfind("fe.", 0) == 0) {
        size_t p = name.find(".conv");
        size_t off = p != std::string::npos ? p + 5 : name.find(".bn") + 3;
        return std::string(1, name[off]);
    }
    if (name.rfind("bottleneck.", 0) == 0) return "4";
    if (name.rfind("branch.", 0) == 0) {
        const size_t p = name.find(".level");
        const char level = name[p + 6];
        if (name.find(".skip.") != std::string::npos)
            return std::string("SC") + level;
        if (level == '1') return "5";
        if (level == '2') return "6";
        return "7";
    }
    throw ContractError("unclassifiable parameter: " + name);
}

} // namespace

std::vector<LayerCount> count_parameters(const ModelParams& m) {
    const std::vector<std::string> rows = {"1",   "2",   "3",  "4",  "5",
                                           "6",   "7",   "SC1", "SC2", "SC3"};
    std::vector<LayerCount> out;
    for (const std::string& r : rows) out.push_back({r, 0, 0, 0});
    for (const auto& [name, p] : m.params) {
        const std::string r = row_of(name);
        for (LayerCount& lc : out) {
            if (lc.row != r) continue;
            const bool running =
                name.ends_with(".rmean") || name.ends_with(".rvar");
            (running ? lc.running : lc.trainable) += p.value.numel();
            lc.total += p.value.numel();
        }
    }
    return out;
}

namespace {

void put_u32(std::vector<uint8_t>& b, uint32_t v) {
    for (int i = 0; i < 4; ++i) b.push_back(uint8_t(v >> (8 * i)));
}

void put_u64(std::vector<uint8_t>& b, uint64_t v) {
    for (int i = 0; i < 8; ++i) b.push_back(uint8_t(v >> (8 * i)));
}

struct Cursor {
    const uint8_t* p;
    size_t size;
    size_t off = 0;

    void need(size_t k) const {
        if (off + k > size) throw FormatError("model file truncated");
    }
    uint32_t u32() {
        need(4);
        uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= uint32_t(p[off + size_t(i)]) << (8 * i);
        off += 4;
        return v;
    }
    uint64_t u64() {
        need(8);
        uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= uint64_t(p[off + size_t(i)]) << (8 * i);
        off += 8;
        return v;
    }
    uint8_t u8() {
        need(1);
        return p[off++];
    }
    std::string str(size_t k) {
        need(k);
        std::string s(reinterpret_cast<const char*>(p + off), k);
        off += k;
        return s;
    }
};

} // namespace

void save_model(const ModelParams& m, const std::string& path) {
    std::vector<uint8_t> buf;
    const char magic[4] = {'T', 'S', 'E', 'G'};
    buf.insert(buf.end(), magic, magic + 4);
    put_u32(buf, 1); // version
    put_u32(buf, uint32_t(m.params.size()));
    for (const auto& [name, p] : m.params) {
        put_u32(buf, uint32_t(name.size()));
        buf.insert(buf.end(), name.begin(), name.end());
        const Shape4 s = p.value.shape();
        if (name.ends_with(".w")) {
            buf.push_back(4);
            put_u32(buf, uint32_t(s.n));
            put_u32(buf, uint32_t(s.c));
            put_u32(buf, uint32_t(s.h));
            put_u32(buf, uint32_t(s.w));
        } else {
            if (s.c != 1 || s.h != 1 || s.w != 1)
                throw ContractError("per-channel parameter " + name +
                                    " has unexpected shape " + s.str());
            buf.push_back(1);
            put_u32(buf, uint32_t(s.n));
        }
        for (int64_t i = 0; i < p.value.numel(); ++i) {
            uint32_t bits;
            float v = p.value[i];
            std::memcpy(&bits, &v, 4);
            put_u32(buf, bits);
        }
    }
    put_u64(buf, buf.size()); // byte count of everything before this field

    const std::string tmp = path + ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f) throw DataError("cannot write model file: " + tmp);
        f.write(reinterpret_cast<const char*>(buf.data()),
                std::streamsize(buf.size()));
        if (!f) throw DataError("write failed: " + tmp);
    }
    if (std::rename(tmp.c_str(), path.c_str()) != 0)
        throw DataError("cannot rename " + tmp + " to " + path);
}

ModelParams load_model(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot open model file: " + path);
    std::vector<uint8_t> buf((std::istreambuf_iterator<char>(f)),
                             std::istreambuf_iterator<char>());
    Cursor c{buf.data(), buf.size()};

    if (c.str(4) != "TSEG") throw FormatError("bad magic, not a model file");
    const uint32_t version = c.u32();
    if (version != 1)
        throw FormatError("unsupported model version " +
                          std::to_string(version));
    const uint32_t count = c.u32();
    if (count > 1000000) throw FormatError("implausible parameter count");

    ModelParams m;
    for (uint32_t i = 0; i < count; ++i) {
        const uint32_t nl = c.u32();
        if (nl == 0 || nl > 4096) throw FormatError("bad parameter name length");
        const std::string name = c.str(nl);
        const uint8_t rank = c.u8();
        if (rank != 1 && rank != 4)
            throw FormatError("unsupported tensor rank " + std::to_string(rank) +
                              " for " + name);
        int64_t dims[4] = {1, 1, 1, 1};
        int64_t numel = 1;
        for (int d = 0; d < rank; ++d) {
            dims[d] = c.u32();
            if (dims[d] < 1 || dims[d] > (1 << 24))
                throw FormatError("bad dimension for " + name);
            numel *= dims[d];
            if (numel > 100000000) throw FormatError("implausible tensor size");
        }
        Tensor<float> v(Shape4{dims[0], dims[1], dims[2], dims[3]});
        c.need(size_t(numel) * 4);
        for (int64_t j = 0; j < numel; ++j) {
            const uint32_t bits = c.u32();
            std::memcpy(&v[j], &bits, 4);
        }
        const bool trainable =
            !(name.ends_with(".rmean") || name.ends_with(".rvar"));
        if (!m.params.emplace(name, Parameter<float>(std::move(v), trainable))
                 .second)
            throw FormatError("duplicate parameter name: " + name);
    }
    const size_t check_at = c.off;
    const uint64_t check = c.u64();
    if (check != check_at)
        throw FormatError("byte-length check mismatch (file corrupt?)");
    if (c.off != buf.size())
        throw FormatError("trailing bytes after byte-length check");
    return m;
}

void validate_params(const ModelParams& m, const NetworkConfig& cfg) {
    const ModelParams ref = build_network(cfg, 0);
    for (const auto& [name, p] : ref.params) {
        auto it = m.params.find(name);
        if (it == m.params.end())
            throw FormatError("model is missing parameter " + name);
        if (!(it->second.value.shape() == p.value.shape()))
            throw FormatError("parameter " + name + " has shape " +
                              it->second.value.shape().str() + ", expected " +
                              p.value.shape().str());
    }
    for (const auto& [name, p] : m.params)
        if (ref.params.find(name) == ref.params.end())
            throw FormatError("model has unexpected parameter " + name);
}

} // namespace tseg
