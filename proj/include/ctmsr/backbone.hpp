#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ctmsr/nn.hpp"
#include "ctmsr/schedules.hpp"
#include "ctmsr/tensor.hpp"

namespace ctmsr {

// Architecture knobs for the denoiser F(x_t, y0, t). The network takes the
// channel concatenation of x_t and y0 (in_channels = 6 for RGB) plus a
// normalized time scalar, and emits an image of x_t's shape.
struct BackboneSpec {
    int in_channels = 6;
    int base_channels = 32;
    int depth = 2;              // residual blocks per resolution level
    int downsample_factor = 2;  // pixel-unshuffle factor in the stem
    int time_embed_dim = 64;

    void validate() const;  // throws std::invalid_argument
};

// Residual block: GroupNorm -> SiLU -> conv, with a per-channel time-embedding
// shift between the two convolutions and a learned 1x1 shortcut when the
// channel count changes.
struct ResBlock {
    GroupNorm gn1, gn2;
    Conv2d conv1, conv2;
    Linear tproj;  // time embedding -> per-channel shift
    Conv2d skip;   // 1x1 projection, used only when in_ch != out_ch
    bool has_skip = false;

    struct Cache {
        GroupNorm::Cache gn1c, gn2c;
        Conv2d::Cache c1c, c2c, skc;
        Linear::Cache tc;
        Tensor a, c;  // pre-activation inputs of the two SiLUs
    };

    ResBlock() = default;
    ResBlock(int in_ch, int out_ch, int emb_dim);

    void init(Rng& rng);
    Tensor forward(const Tensor& x, const Tensor& u, Cache* cache) const;
    // Accumulates layer gradients; adds the time-embedding gradient into du.
    Tensor backward(const Tensor& dy, const Cache& cache, Tensor& du);
    void visit(const std::string& prefix, std::vector<struct ParamRef>& out);
    void visit(const std::string& prefix, std::vector<struct CParamRef>& out) const;
};

struct ParamRef {
    std::string name;
    Tensor* value;
    Tensor* grad;
};

struct CParamRef {
    std::string name;
    const Tensor* value;
};

// Forward cache for one backbone evaluation.
struct BackboneCache {
    Linear::Cache tl1c, tl2c;
    Tensor t_m1, t_semb;  // pre-activation inputs of the time-MLP SiLUs
    Tensor u;             // activated time embedding shared by all blocks
    Conv2d::Cache stemc, down0c, down1c, up1c, up0c, outc;
    std::vector<ResBlock::Cache> enc0c, enc1c, midc, dec1c, dec0c;
    GroupNorm::Cache out_gnc;
    Tensor out_pre;  // pre-activation input of the final SiLU
};

// Encoder/decoder denoiser: pixel-unshuffle stem, three resolution levels of
// residual blocks (the lowest one base*2 wide with an extra block), nearest-
// neighbor upsampling with skip concatenation, and a zero-initialized output
// convolution so a fresh network is the zero function.
class Backbone {
public:
    Backbone() = default;
    explicit Backbone(const BackboneSpec& spec);

    void init_params(uint64_t seed);
    const BackboneSpec& spec() const { return spec_; }

    // u_time is the normalized step t/T in [0, 1].
    Tensor forward(const Tensor& x_in, double u_time, BackboneCache* cache) const;
    Tensor backward(const Tensor& d_out, const BackboneCache& cache);

    void zero_grads();
    std::vector<ParamRef> params();
    std::vector<CParamRef> params() const;
    long long param_count() const;

    long long eval_count() const { return eval_count_; }
    void reset_eval_count() { eval_count_ = 0; }

private:
    BackboneSpec spec_;
    Linear time_lin1_, time_lin2_;
    Conv2d stem_, down0_, down1_, up1_, up0_, out_conv_;
    std::vector<ResBlock> enc0_, enc1_, mid_, dec1_, dec0_;
    GroupNorm out_gn_;
    mutable long long eval_count_ = 0;  // instrumentation for the one-step contract
};

// The trained entity: schedule plus denoiser. Copying a ConsistencyModel
// deep-copies every parameter, which is what snapshot() relies on.
struct ConsistencyModel {
    BackboneSpec arch;
    ScheduleConfig cfg;
    Backbone net;
};

ConsistencyModel init_params(const BackboneSpec& spec, const ScheduleConfig& cfg, uint64_t seed);

// Gradient-isolated deep copy with cleared gradient buffers.
ConsistencyModel snapshot(const ConsistencyModel& model);

}  // namespace ctmsr
