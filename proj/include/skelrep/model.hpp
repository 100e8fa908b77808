#pragma once

// Residual convolutional autoencoder over [N, 3, m, t] skeleton tensors.
// Encoder: three residual blocks (three conv+ReLU layers each, identity or
// 1x1-projection skip, MaxPool at the block end) followed by a dense layer
// onto the latent code. Decoder mirrors it: dense from the latent, then
// three blocks of MaxUnpool + three deconv layers with ReLU and BatchNorm,
// plus the same skip structure, ending at d = 3 channels.

#include <map>
#include <memory>
#include <string>
#include <vector>

#include "skelrep/adam.hpp"
#include "skelrep/nn.hpp"

namespace skelrep {

struct ModelConfig {
  Eigen::Index joints = 25;
  Eigen::Index frames = 64;
  std::vector<Eigen::Index> channels = {16, 32, 64};   // encoder block outputs
  Eigen::Index kernel_w = 3;                           // body kernels are 1 x kernel_w
  std::vector<std::pair<Eigen::Index, Eigen::Index>> pools = {{1, 2}, {1, 2}, {1, 2}};
  Eigen::Index latent_dim = 128;
  bool latent_relu = false;     // activation on the latent dense layer
  bool linear_output = false;   // drop ReLU+BatchNorm on the final deconv layer

  static constexpr Eigen::Index kInputChannels = 3;
  static constexpr int kBlocks = 3;

  void validate() const {
    if (joints < 1 || frames < 2) fail("model config: need m >= 1 and t >= 2");
    if (static_cast<int>(channels.size()) != kBlocks)
      fail("model config: expected " + std::to_string(kBlocks) + " channel widths, got " +
           std::to_string(channels.size()));
    if (static_cast<int>(pools.size()) != kBlocks)
      fail("model config: expected " + std::to_string(kBlocks) + " pool windows");
    if (kernel_w != 1 && kernel_w != 3)
      fail("model config: body kernels must be 1x1 or 1x3, got 1x" + std::to_string(kernel_w));
    if (latent_dim < 1) fail("model config: latent_dim must be >= 1");
    Eigen::Index h = joints, w = frames;
    for (int b = 0; b < kBlocks; ++b) {
      const auto& [ph, pw] = pools[static_cast<std::size_t>(b)];
      if (channels[static_cast<std::size_t>(b)] < 1)
        fail("model config: block " + std::to_string(b + 1) + ": channels must be >= 1");
      if (ph < 1 || pw < 1)
        fail("model config: block " + std::to_string(b + 1) + ": pool window must be >= 1");
      if (h % ph != 0 || w % pw != 0)
        fail("model config: block " + std::to_string(b + 1) + ": pool (" + std::to_string(ph) +
             "," + std::to_string(pw) + ") does not divide plane (" + std::to_string(h) + "," +
             std::to_string(w) + ")");
      h /= ph;
      w /= pw;
    }
  }

  // Feature-map plane after all encoder pools.
  std::pair<Eigen::Index, Eigen::Index> bottleneck_plane() const {
    Eigen::Index h = joints, w = frames;
    for (const auto& [ph, pw] : pools) {
      h /= ph;
      w /= pw;
    }
    return {h, w};
  }

  Eigen::Index bottleneck_features() const {
    auto [h, w] = bottleneck_plane();
    return channels.back() * h * w;
  }
};

template <typename S>
struct EncodeResult {
  NodePtr<S> z;
  std::vector<std::shared_ptr<PoolIndexMap>> pool_indices;  // one per encoder block
};

template <typename S>
class Autoencoder {
 public:
  ModelConfig config;
  ParamMap<S> params;
  std::map<std::string, BnStats<S>> bn_stats;  // keyed by bn layer name

  static Autoencoder init(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    Autoencoder ae;
    ae.config = cfg;
    const Eigen::Index kw = cfg.kernel_w;

    Eigen::Index cin = ModelConfig::kInputChannels;
    for (int b = 0; b < ModelConfig::kBlocks; ++b) {
      const Eigen::Index cout = cfg.channels[static_cast<std::size_t>(b)];
      const std::string blk = "enc.block" + std::to_string(b + 1) + ".";
      ae.add_conv(blk + "conv1", cout, cin, 1, kw, seed);
      ae.add_conv(blk + "conv2", cout, cout, 1, kw, seed);
      ae.add_conv(blk + "conv3", cout, cout, 1, kw, seed);
      if (cin != cout) ae.add_proj(blk + "proj", cout, cin, seed);
      cin = cout;
    }
    const Eigen::Index feat = cfg.bottleneck_features();
    ae.add_dense("enc.fc", feat, cfg.latent_dim, seed);
    ae.add_dense("dec.fc", cfg.latent_dim, feat, seed);

    cin = cfg.channels.back();
    for (int b = 0; b < ModelConfig::kBlocks; ++b) {
      const Eigen::Index cout = (b + 1 < ModelConfig::kBlocks)
                                    ? cfg.channels[static_cast<std::size_t>(
                                          ModelConfig::kBlocks - 2 - b)]
                                    : ModelConfig::kInputChannels;
      const std::string blk = "dec.block" + std::to_string(b + 1) + ".";
      ae.add_deconv(blk + "deconv1", cin, cin, 1, kw, seed);
      ae.add_deconv(blk + "deconv2", cin, cin, 1, kw, seed);
      ae.add_deconv(blk + "deconv3", cin, cout, 1, kw, seed);
      const bool last_linear = cfg.linear_output && b + 1 == ModelConfig::kBlocks;
      ae.add_bn(blk + "bn1", cin);
      ae.add_bn(blk + "bn2", cin);
      if (!last_linear) ae.add_bn(blk + "bn3", cout);
      if (cin != cout) ae.add_proj(blk + "proj", cout, cin, seed);
      cin = cout;
    }
    return ae;
  }

  // Encoder forward; records per-block pooling indices for the decoder.
  EncodeResult<S> encode(const NodePtr<S>& x) const {
    check_input(x->value.shape);
    EncodeResult<S> res;
    NodePtr<S> h = x;
    for (int b = 0; b < ModelConfig::kBlocks; ++b) {
      const std::string blk = "enc.block" + std::to_string(b + 1) + ".";
      NodePtr<S> body = relu(conv_layer(blk + "conv1", h));
      body = relu(conv_layer(blk + "conv2", body));
      body = relu(conv_layer(blk + "conv3", body));
      NodePtr<S> skip = params.count(blk + "proj.weight") ? proj_layer(blk + "proj", h) : h;
      NodePtr<S> summed = add(body, skip);
      const auto& [ph, pw] = config.pools[static_cast<std::size_t>(b)];
      auto pooled = maxpool2d(summed, ph, pw);
      res.pool_indices.push_back(pooled.indices);
      h = pooled.out;
    }
    NodePtr<S> z = dense(flatten2d(h), params.at("enc.fc.weight"), params.at("enc.fc.bias"));
    if (config.latent_relu) z = relu(z);
    res.z = z;
    return res;
  }

  // Decoder forward; consumes the pooling indices produced by encode on the
  // same batch (block k unpools with the indices of encoder block 3-k+1).
  NodePtr<S> decode(const NodePtr<S>& z, const std::vector<std::shared_ptr<PoolIndexMap>>& indices,
                    BnMode mode) {
    if (z->value.rank() != 2 || z->value.shape[1] != config.latent_dim)
      fail("decode: latent shape " + shape_str(z->value.shape) + " does not match latent_dim " +
           std::to_string(config.latent_dim));
    if (static_cast<int>(indices.size()) != ModelConfig::kBlocks)
      fail("decode: expected " + std::to_string(ModelConfig::kBlocks) + " pooling index maps");
    const Eigen::Index n = z->value.shape[0];
    auto [bh, bw] = config.bottleneck_plane();
    NodePtr<S> h = dense(z, params.at("dec.fc.weight"), params.at("dec.fc.bias"));
    h = reshape(h, Shape{n, config.channels.back(), bh, bw});
    for (int b = 0; b < ModelConfig::kBlocks; ++b) {
      const std::string blk = "dec.block" + std::to_string(b + 1) + ".";
      const auto& idx = indices[static_cast<std::size_t>(ModelConfig::kBlocks - 1 - b)];
      Shape up{h->value.shape[0], h->value.shape[1], idx->src_h, idx->src_w};
      NodePtr<S> u = maxunpool2d(h, idx, up);
      const bool last_linear = config.linear_output && b + 1 == ModelConfig::kBlocks;
      NodePtr<S> body = bn_layer(blk + "bn1", relu(deconv_layer(blk + "deconv1", u)), mode);
      body = bn_layer(blk + "bn2", relu(deconv_layer(blk + "deconv2", body)), mode);
      body = deconv_layer(blk + "deconv3", body);
      if (!last_linear) body = bn_layer(blk + "bn3", relu(body), mode);
      NodePtr<S> skip = params.count(blk + "proj.weight") ? proj_layer(blk + "proj", u) : u;
      h = add(body, skip);
    }
    return h;
  }

  NodePtr<S> reconstruct(const NodePtr<S>& x, BnMode mode) {
    auto enc = encode(x);
    return decode(enc.z, enc.pool_indices, mode);
  }

  Eigen::Index param_count() const {
    Eigen::Index n = 0;
    for (const auto& [name, p] : params) n += p->value.numel();
    return n;
  }

  ParamMap<S> encoder_params() const { return subset("enc."); }
  ParamMap<S> decoder_params() const { return subset("dec."); }

 private:
  ParamMap<S> subset(const std::string& prefix) const {
    ParamMap<S> out;
    for (const auto& [name, p] : params)
      if (name.rfind(prefix, 0) == 0) out[name] = p;
    return out;
  }

  void check_input(const Shape& sh) const {
    if (sh.size() != 4) fail("encode: input must be rank 4 [N,3,m,t]");
    if (sh[1] != ModelConfig::kInputChannels || sh[2] != config.joints || sh[3] != config.frames)
      fail("encode: input shape " + shape_str(sh) + " does not match configured [N,3," +
           std::to_string(config.joints) + "," + std::to_string(config.frames) + "]");
  }

  NodePtr<S> init_uniform(Shape sh, Eigen::Index fan_in, const std::string& name,
                          std::uint64_t seed) {
    auto rng = Rng::stream(seed, "init/" + name);
    const S bound = S(1) / static_cast<S>(std::sqrt(static_cast<double>(fan_in)));
    return leaf(TensorT<S>::uniform(std::move(sh), rng, -bound, bound));
  }

  void add_conv(const std::string& name, Eigen::Index cout, Eigen::Index cin, Eigen::Index kh,
                Eigen::Index kw, std::uint64_t seed) {
    params[name + ".weight"] = init_uniform({cout, cin, kh, kw}, cin * kh * kw, name + ".weight", seed);
    params[name + ".bias"] = init_uniform({cout}, cin * kh * kw, name + ".bias", seed);
  }

  void add_deconv(const std::string& name, Eigen::Index cin, Eigen::Index cout, Eigen::Index kh,
                  Eigen::Index kw, std::uint64_t seed) {
    params[name + ".weight"] = init_uniform({cin, cout, kh, kw}, cin * kh * kw, name + ".weight", seed);
    params[name + ".bias"] = init_uniform({cout}, cin * kh * kw, name + ".bias", seed);
  }

  void add_proj(const std::string& name, Eigen::Index cout, Eigen::Index cin, std::uint64_t seed) {
    params[name + ".weight"] = init_uniform({cout, cin, 1, 1}, cin, name + ".weight", seed);
  }

  void add_dense(const std::string& name, Eigen::Index fin, Eigen::Index fout,
                 std::uint64_t seed) {
    params[name + ".weight"] = init_uniform({fin, fout}, fin, name + ".weight", seed);
    params[name + ".bias"] = init_uniform({fout}, fin, name + ".bias", seed);
  }

  void add_bn(const std::string& name, Eigen::Index channels) {
    params[name + ".gamma"] = leaf(TensorT<S>::full({channels}, S(1)));
    params[name + ".beta"] = leaf(TensorT<S>::zeros({channels}));
    bn_stats.emplace(name, BnStats<S>(channels));
  }

  Conv2dSpec body_spec() const {
    Conv2dSpec s;
    s.pad_w = (config.kernel_w - 1) / 2;  // same-size along time for 1x3
    return s;
  }

  NodePtr<S> conv_layer(const std::string& name, const NodePtr<S>& x) const {
    return bias_add(conv2d(x, params.at(name + ".weight"), body_spec()), params.at(name + ".bias"));
  }

  NodePtr<S> deconv_layer(const std::string& name, const NodePtr<S>& x) const {
    return bias_add(deconv2d(x, params.at(name + ".weight"), body_spec()),
                    params.at(name + ".bias"));
  }

  NodePtr<S> proj_layer(const std::string& name, const NodePtr<S>& x) const {
    return conv2d(x, params.at(name + ".weight"), Conv2dSpec{});
  }

  NodePtr<S> bn_layer(const std::string& name, const NodePtr<S>& x, BnMode mode) {
    return batchnorm2d(x, params.at(name + ".gamma"), params.at(name + ".beta"),
                       bn_stats.at(name), mode);
  }
};

}  // namespace skelrep
