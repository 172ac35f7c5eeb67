#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "tseg/tape.hpp"

namespace tseg {

// Architecture hyper-parameters. Defaults reproduce the published layer table
// (61,843 parameters); the ablation flags build the reduced variants.
struct NetworkConfig {
    int64_t input_height = 200;
    int64_t input_width = 168;
    int64_t mono_kernels = 4;       // per mono sub-path, x4 sub-paths
    int64_t paired_kernels = 8;     // per paired sub-path, x2 sub-paths
    int64_t cross_kernels = 16;
    int64_t bottleneck_kernels = 16;
    int64_t branch_kernels = 16;
    float bn_eps = 1e-3f;
    float bn_momentum = 0.01f;
    bool single_path_fe = false;     // ablation: keep only the cross path
    bool single_branch = false;      // ablation: WT head only
    bool additive_modulation = false; // ablation: skip += instead of skip *=

    int64_t skip_channels() const {
        return single_path_fe
                   ? cross_kernels
                   : 4 * mono_kernels + 2 * paired_kernels + cross_kernels;
    }
    int64_t num_branches() const { return single_branch ? 1 : 3; }
};

enum class BranchId { WT = 0, ET = 1, NET = 2 };
const char* branch_name(BranchId b);

// All learnable state, keyed by hierarchical name (e.g. fe.mono.0.conv1.w).
// std::map keeps iteration lexicographic, which freezes the initialization
// draw order and the serialization layout.
struct ModelParams {
    std::map<std::string, Parameter<float>> params;
    uint64_t seed = 0;

    Parameter<float>& at(const std::string& name);
    const Parameter<float>& at(const std::string& name) const;
    int64_t total_count() const;
    void zero_grads();
};

ModelParams build_network(const NetworkConfig& cfg, uint64_t seed);

// Node ids of the feature-extraction outputs on a tape: the three pre-pool
// skip tensors (level 1 = full resolution) and the bottleneck output.
struct FeNodes {
    std::array<int, 3> skip{};
    int bottom = -1;
};

// Graph builders used by both training (one tape per branch) and inference
// (three branches on a shared tape). Both apply the memory-frugal drop
// schedule; drop_skips additionally frees each skip tensor after its single
// per-branch consumer, which is only legal when one branch owns the tape.
FeNodes build_fe(Tape<float>& t, int x, ModelParams& m,
                 const NetworkConfig& cfg, bool update_running);
int build_branch(Tape<float>& t, const FeNodes& fe, BranchId b, ModelParams& m,
                 const NetworkConfig& cfg, bool drop_skips,
                 bool update_running);

struct BranchOutputs {
    Tensor<float> wt, et, net; // probabilities in (0,1), [N,1,H,W]
};

BranchOutputs forward(ModelParams& m, const Tensor<float>& batch,
                      const NetworkConfig& cfg, Mode mode);

// Per-row parameter accounting matching the published table: rows "1".."7"
// plus the three skip-connection rows "SC1".."SC3".
struct LayerCount {
    std::string row;
    int64_t trainable = 0;
    int64_t running = 0; // batch-norm running statistics
    int64_t total = 0;
};

std::vector<LayerCount> count_parameters(const ModelParams& m);

void save_model(const ModelParams& m, const std::string& path);
ModelParams load_model(const std::string& path);

// Structural check that a loaded parameter set matches a config (same names,
// same shapes). Throws FormatError on any mismatch.
void validate_params(const ModelParams& m, const NetworkConfig& cfg);

} // namespace tseg
