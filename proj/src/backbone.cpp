#include "ctmsr/backbone.hpp"

#include <stdexcept>

namespace ctmsr {

void BackboneSpec::validate() const {
    if (in_channels < 2 || in_channels % 2) throw std::invalid_argument("BackboneSpec: in_channels must be even >= 2");
    if (base_channels < 2) throw std::invalid_argument("BackboneSpec: base_channels must be >= 2");
    if (depth < 1) throw std::invalid_argument("BackboneSpec: depth must be >= 1");
    if (downsample_factor < 1) throw std::invalid_argument("BackboneSpec: downsample_factor must be >= 1");
    if (time_embed_dim < 2 || time_embed_dim % 2)
        throw std::invalid_argument("BackboneSpec: time_embed_dim must be even >= 2");
}

ResBlock::ResBlock(int in_ch, int out_ch, int emb_dim)
    : gn1(in_ch),
      gn2(out_ch),
      conv1(in_ch, out_ch, 3, 1),
      conv2(out_ch, out_ch, 3, 1),
      tproj(emb_dim, out_ch),
      has_skip(in_ch != out_ch) {
    if (has_skip) skip = Conv2d(in_ch, out_ch, 1, 1);
}

void ResBlock::init(Rng& rng) {
    conv1.init(rng);
    conv2.init(rng);
    tproj.init(rng);
    if (has_skip) skip.init(rng);
}

Tensor ResBlock::forward(const Tensor& x, const Tensor& u, Cache* cache) const {
    Tensor a = gn1.forward(x, cache ? &cache->gn1c : nullptr);
    Tensor h = conv1.forward(silu(a), cache ? &cache->c1c : nullptr);
    Tensor shift = tproj.forward(u, cache ? &cache->tc : nullptr);
    size_t plane = static_cast<size_t>(h.height()) * h.width();
    for (int c = 0; c < h.channels(); ++c)
        for (size_t i = 0; i < plane; ++i) h.data[c * plane + i] += shift.data[c];
    Tensor c2 = gn2.forward(h, cache ? &cache->gn2c : nullptr);
    Tensor out = conv2.forward(silu(c2), cache ? &cache->c2c : nullptr);
    if (has_skip)
        axpy(1.0, skip.forward(x, cache ? &cache->skc : nullptr), out);
    else
        axpy(1.0, x, out);
    if (cache) {
        cache->a = std::move(a);
        cache->c = std::move(c2);
    }
    return out;
}

Tensor ResBlock::backward(const Tensor& dy, const Cache& cache, Tensor& du) {
    Tensor dd = silu_backward(conv2.backward(dy, cache.c2c), cache.c);
    Tensor dh = gn2.backward(dd, cache.gn2c);
    // The time shift is broadcast over the plane, so its gradient is the
    // per-channel sum.
    Tensor dshift({dh.channels()});
    size_t plane = static_cast<size_t>(dh.height()) * dh.width();
    for (int c = 0; c < dh.channels(); ++c) {
        double s = 0.0;
        for (size_t i = 0; i < plane; ++i) s += dh.data[c * plane + i];
        dshift.data[c] = s;
    }
    axpy(1.0, tproj.backward(dshift, cache.tc), du);
    Tensor da = silu_backward(conv1.backward(dh, cache.c1c), cache.a);
    Tensor dx = gn1.backward(da, cache.gn1c);
    if (has_skip)
        axpy(1.0, skip.backward(dy, cache.skc), dx);
    else
        axpy(1.0, dy, dx);
    return dx;
}

void ResBlock::visit(const std::string& prefix, std::vector<ParamRef>& out) {
    out.push_back({prefix + ".gn1.gamma", &gn1.gamma, &gn1.ggamma});
    out.push_back({prefix + ".gn1.beta", &gn1.beta, &gn1.gbeta});
    out.push_back({prefix + ".conv1.w", &conv1.w, &conv1.gw});
    out.push_back({prefix + ".conv1.b", &conv1.b, &conv1.gb});
    out.push_back({prefix + ".tproj.w", &tproj.w, &tproj.gw});
    out.push_back({prefix + ".tproj.b", &tproj.b, &tproj.gb});
    out.push_back({prefix + ".gn2.gamma", &gn2.gamma, &gn2.ggamma});
    out.push_back({prefix + ".gn2.beta", &gn2.beta, &gn2.gbeta});
    out.push_back({prefix + ".conv2.w", &conv2.w, &conv2.gw});
    out.push_back({prefix + ".conv2.b", &conv2.b, &conv2.gb});
    if (has_skip) {
        out.push_back({prefix + ".skip.w", &skip.w, &skip.gw});
        out.push_back({prefix + ".skip.b", &skip.b, &skip.gb});
    }
}

void ResBlock::visit(const std::string& prefix, std::vector<CParamRef>& out) const {
    out.push_back({prefix + ".gn1.gamma", &gn1.gamma});
    out.push_back({prefix + ".gn1.beta", &gn1.beta});
    out.push_back({prefix + ".conv1.w", &conv1.w});
    out.push_back({prefix + ".conv1.b", &conv1.b});
    out.push_back({prefix + ".tproj.w", &tproj.w});
    out.push_back({prefix + ".tproj.b", &tproj.b});
    out.push_back({prefix + ".gn2.gamma", &gn2.gamma});
    out.push_back({prefix + ".gn2.beta", &gn2.beta});
    out.push_back({prefix + ".conv2.w", &conv2.w});
    out.push_back({prefix + ".conv2.b", &conv2.b});
    if (has_skip) {
        out.push_back({prefix + ".skip.w", &skip.w});
        out.push_back({prefix + ".skip.b", &skip.b});
    }
}

Backbone::Backbone(const BackboneSpec& spec) : spec_(spec) {
    spec.validate();
    int b = spec.base_channels, e = spec.time_embed_dim, r = spec.downsample_factor;
    time_lin1_ = Linear(e, e);
    time_lin2_ = Linear(e, e);
    stem_ = Conv2d(spec.in_channels * r * r, b, 3, 1);
    for (int i = 0; i < spec.depth; ++i) enc0_.emplace_back(b, b, e);
    down0_ = Conv2d(b, b, 3, 2);
    for (int i = 0; i < spec.depth; ++i) enc1_.emplace_back(b, b, e);
    down1_ = Conv2d(b, 2 * b, 3, 2);
    for (int i = 0; i < spec.depth + 1; ++i) mid_.emplace_back(2 * b, 2 * b, e);
    up1_ = Conv2d(2 * b, b, 3, 1);
    dec1_.emplace_back(2 * b, b, e);
    for (int i = 1; i < spec.depth; ++i) dec1_.emplace_back(b, b, e);
    up0_ = Conv2d(b, b, 3, 1);
    dec0_.emplace_back(2 * b, b, e);
    for (int i = 1; i < spec.depth; ++i) dec0_.emplace_back(b, b, e);
    out_gn_ = GroupNorm(b);
    out_conv_ = Conv2d(b, spec.in_channels / 2, 3, 1);
}

void Backbone::init_params(uint64_t seed) {
    Rng rng(seed);
    time_lin1_.init(rng);
    time_lin2_.init(rng);
    stem_.init(rng);
    for (auto& rb : enc0_) rb.init(rng);
    down0_.init(rng);
    for (auto& rb : enc1_) rb.init(rng);
    down1_.init(rng);
    for (auto& rb : mid_) rb.init(rng);
    up1_.init(rng);
    for (auto& rb : dec1_) rb.init(rng);
    up0_.init(rng);
    for (auto& rb : dec0_) rb.init(rng);
    out_conv_.zero_params();
}

Tensor Backbone::forward(const Tensor& x_in, double u_time, BackboneCache* cache) const {
    int r = spec_.downsample_factor;
    if (x_in.rank() != 3 || x_in.channels() != spec_.in_channels)
        throw std::invalid_argument("Backbone: expected " + std::to_string(spec_.in_channels) + " channels, got " +
                                    x_in.shape_str());
    if (x_in.height() % (r * 4) || x_in.width() % (r * 4))
        throw std::invalid_argument("Backbone: sides of " + x_in.shape_str() + " must be divisible by " +
                                    std::to_string(r * 4));
    ++eval_count_;

    // Time path: sinusoidal features of the normalized step, through a 2-layer
    // MLP; blocks consume the activated embedding u.
    Tensor t_sin = sinusoidal_embedding(u_time * 1000.0, spec_.time_embed_dim);
    Tensor m1 = time_lin1_.forward(t_sin, cache ? &cache->tl1c : nullptr);
    Tensor semb = time_lin2_.forward(silu(m1), cache ? &cache->tl2c : nullptr);
    Tensor u = silu(semb);
    if (cache) {
        cache->t_m1 = m1;
        cache->t_semb = semb;
        cache->u = u;
    }

    auto run_blocks = [&](const std::vector<ResBlock>& blocks, Tensor h, std::vector<ResBlock::Cache>* bc) {
        if (bc) bc->resize(blocks.size());
        for (size_t i = 0; i < blocks.size(); ++i) h = blocks[i].forward(h, u, bc ? &(*bc)[i] : nullptr);
        return h;
    };

    Tensor h = stem_.forward(pixel_unshuffle(x_in, r), cache ? &cache->stemc : nullptr);
    Tensor e0 = run_blocks(enc0_, std::move(h), cache ? &cache->enc0c : nullptr);
    h = down0_.forward(e0, cache ? &cache->down0c : nullptr);
    Tensor e1 = run_blocks(enc1_, std::move(h), cache ? &cache->enc1c : nullptr);
    h = down1_.forward(e1, cache ? &cache->down1c : nullptr);
    h = run_blocks(mid_, std::move(h), cache ? &cache->midc : nullptr);

    h = up1_.forward(nearest_upsample(h, 2), cache ? &cache->up1c : nullptr);
    h = run_blocks(dec1_, concat_channels(h, e1), cache ? &cache->dec1c : nullptr);
    h = up0_.forward(nearest_upsample(h, 2), cache ? &cache->up0c : nullptr);
    h = run_blocks(dec0_, concat_channels(h, e0), cache ? &cache->dec0c : nullptr);

    Tensor g = out_gn_.forward(h, cache ? &cache->out_gnc : nullptr);
    if (cache) cache->out_pre = g;
    Tensor y = out_conv_.forward(nearest_upsample(silu(g), r), cache ? &cache->outc : nullptr);
    if (!y.all_finite()) throw std::runtime_error("Backbone: non-finite activation in forward output");
    return y;
}

Tensor Backbone::backward(const Tensor& d_out, const BackboneCache& cache) {
    int r = spec_.downsample_factor, b = spec_.base_channels;
    Tensor du({spec_.time_embed_dim});

    auto back_blocks = [&](std::vector<ResBlock>& blocks, Tensor d, const std::vector<ResBlock::Cache>& bc) {
        for (size_t i = blocks.size(); i-- > 0;) d = blocks[i].backward(d, bc[i], du);
        return d;
    };

    Tensor d = nearest_upsample_backward(out_conv_.backward(d_out, cache.outc), r);
    d = out_gn_.backward(silu_backward(d, cache.out_pre), cache.out_gnc);

    d = back_blocks(dec0_, std::move(d), cache.dec0c);
    Tensor d_e0_skip = channel_slice(d, b, 2 * b);
    d = nearest_upsample_backward(up0_.backward(channel_slice(d, 0, b), cache.up0c), 2);

    d = back_blocks(dec1_, std::move(d), cache.dec1c);
    Tensor d_e1_skip = channel_slice(d, b, 2 * b);
    d = nearest_upsample_backward(up1_.backward(channel_slice(d, 0, b), cache.up1c), 2);

    d = back_blocks(mid_, std::move(d), cache.midc);
    d = down1_.backward(d, cache.down1c);
    axpy(1.0, d_e1_skip, d);
    d = back_blocks(enc1_, std::move(d), cache.enc1c);
    d = down0_.backward(d, cache.down0c);
    axpy(1.0, d_e0_skip, d);
    d = back_blocks(enc0_, std::move(d), cache.enc0c);
    Tensor dx = pixel_unshuffle_backward(stem_.backward(d, cache.stemc), r);

    Tensor dsemb = silu_backward(du, cache.t_semb);
    Tensor dm1 = silu_backward(time_lin2_.backward(dsemb, cache.tl2c), cache.t_m1);
    time_lin1_.backward(dm1, cache.tl1c);
    return dx;
}

std::vector<ParamRef> Backbone::params() {
    std::vector<ParamRef> out;
    out.push_back({"time.lin1.w", &time_lin1_.w, &time_lin1_.gw});
    out.push_back({"time.lin1.b", &time_lin1_.b, &time_lin1_.gb});
    out.push_back({"time.lin2.w", &time_lin2_.w, &time_lin2_.gw});
    out.push_back({"time.lin2.b", &time_lin2_.b, &time_lin2_.gb});
    out.push_back({"stem.w", &stem_.w, &stem_.gw});
    out.push_back({"stem.b", &stem_.b, &stem_.gb});
    for (size_t i = 0; i < enc0_.size(); ++i) enc0_[i].visit("enc0." + std::to_string(i), out);
    out.push_back({"down0.w", &down0_.w, &down0_.gw});
    out.push_back({"down0.b", &down0_.b, &down0_.gb});
    for (size_t i = 0; i < enc1_.size(); ++i) enc1_[i].visit("enc1." + std::to_string(i), out);
    out.push_back({"down1.w", &down1_.w, &down1_.gw});
    out.push_back({"down1.b", &down1_.b, &down1_.gb});
    for (size_t i = 0; i < mid_.size(); ++i) mid_[i].visit("mid." + std::to_string(i), out);
    out.push_back({"up1.w", &up1_.w, &up1_.gw});
    out.push_back({"up1.b", &up1_.b, &up1_.gb});
    for (size_t i = 0; i < dec1_.size(); ++i) dec1_[i].visit("dec1." + std::to_string(i), out);
    out.push_back({"up0.w", &up0_.w, &up0_.gw});
    out.push_back({"up0.b", &up0_.b, &up0_.gb});
    for (size_t i = 0; i < dec0_.size(); ++i) dec0_[i].visit("dec0." + std::to_string(i), out);
    out.push_back({"out.gn.gamma", &out_gn_.gamma, &out_gn_.ggamma});
    out.push_back({"out.gn.beta", &out_gn_.beta, &out_gn_.gbeta});
    out.push_back({"out.conv.w", &out_conv_.w, &out_conv_.gw});
    out.push_back({"out.conv.b", &out_conv_.b, &out_conv_.gb});
    return out;
}

std::vector<CParamRef> Backbone::params() const {
    // Mirrors the non-const registry; the two must stay in lockstep.
    std::vector<CParamRef> out;
    auto mutable_refs = const_cast<Backbone*>(this)->params();
    out.reserve(mutable_refs.size());
    for (const auto& p : mutable_refs) out.push_back({p.name, p.value});
    return out;
}

long long Backbone::param_count() const {
    long long n = 0;
    for (const auto& p : params()) n += p.value->size();
    return n;
}

void Backbone::zero_grads() {
    for (auto& p : params()) fill(*p.grad, 0.0);
}

ConsistencyModel init_params(const BackboneSpec& spec, const ScheduleConfig& cfg, uint64_t seed) {
    spec.validate();
    cfg.validate();
    ConsistencyModel m{spec, cfg, Backbone(spec)};
    m.net.init_params(seed);
    return m;
}

ConsistencyModel snapshot(const ConsistencyModel& model) {
    ConsistencyModel copy = model;
    copy.net.zero_grads();
    copy.net.reset_eval_count();
    return copy;
}

}  // namespace ctmsr
