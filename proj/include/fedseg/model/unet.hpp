#pragma once

#include "fedseg/common.hpp"
#include "fedseg/model/layers.hpp"
#include "fedseg/model/weights.hpp"

#include <array>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace fedseg {

struct UNetConfig {
  int depth = 3;          // dual-conv encoder stages
  int base_channels = 8;  // channels of the first stage; doubles per stage
  int in_channels = 2;
  int out_channels = 2;
  double bn_momentum = 0.1;
  double bn_eps = 1e-5;
  double prelu_init = 0.25;

  void validate() const {
    if (depth < 1) throw ConfigError("unet depth must be >= 1");
    if (base_channels < 1) throw ConfigError("unet base_channels must be >= 1");
    if (in_channels < 1) throw ConfigError("unet in_channels must be >= 1");
    if (out_channels != 2) throw ConfigError("unet out_channels must be 2 (background, lesion)");
  }

  /// Spatial sizes must be multiples of this.
  [[nodiscard]] int spatial_multiple() const { return 1 << (depth - 1); }

  [[nodiscard]] std::string fingerprint() const {
    return "unet2d/depth=" + std::to_string(depth) + "/C=" + std::to_string(base_channels) +
           "/in=" + std::to_string(in_channels) + "/out=" + std::to_string(out_channels) +
           "/norm=batch/act=prelu/k=3";
  }

  friend bool operator==(const UNetConfig&, const UNetConfig&) = default;
};

/// 2D U-Net: `depth` encoder dual-conv stages (the first at stride 1, later
/// ones downsampling with a stride-2 first conv), a 2x2 transposed conv plus
/// skip concatenation and a dual-conv on the way up, and a 1x1 head.
/// Each conv is Conv3x3 -> BatchNorm -> PReLU.
///
/// The network object only describes the architecture; all state lives in
/// the WeightVector passed to each call.
template <typename Scalar>
class UNet {
 public:
  using Weights = WeightVector<Scalar>;
  using Map = nn::FeatureMap<Scalar>;
  using Matrix = nn::Matrix<Scalar>;
  using Vector = nn::Vector<Scalar>;

  explicit UNet(UNetConfig cfg) : cfg_(cfg) {
    cfg_.validate();
    layout_ = Weights(cfg_.fingerprint());
    const int c = cfg_.base_channels;
    for (int l = 0; l < cfg_.depth; ++l) {
      const int cin = l == 0 ? cfg_.in_channels : c << (l - 1);
      const int cout = c << l;
      const std::string p = "enc" + std::to_string(l);
      enc_.push_back({add_block(p + ".1", cin, cout, l == 0 ? 1 : 2), add_block(p + ".2", cout, cout, 1)});
    }
    dec_.resize(static_cast<std::size_t>(cfg_.depth - 1));
    up_.resize(static_cast<std::size_t>(cfg_.depth - 1));
    for (int l = cfg_.depth - 2; l >= 0; --l) {
      const int cout = c << l;
      const std::string u = "up" + std::to_string(l);
      up_[l] = UpConv{2 * cout, cout, layout_.add(u + ".weight", {2 * cout, cout, 2, 2}),
                      layout_.add(u + ".bias", {cout})};
      const std::string p = "dec" + std::to_string(l);
      dec_[l] = {add_block(p + ".1", 2 * cout, cout, 1), add_block(p + ".2", cout, cout, 1)};
    }
    head_w_ = layout_.add("head.weight", {cfg_.out_channels, c, 1, 1});
    head_b_ = layout_.add("head.bias", {cfg_.out_channels});
  }

  const UNetConfig& config() const { return cfg_; }

  /// Zero-valued weights with this network's layout.
  const Weights& layout() const { return layout_; }

  /// He-normal convolution weights (PReLU gain), unit BN scale, zero biases.
  Weights init(std::uint64_t seed) const {
    Weights w = layout_;
    std::mt19937_64 rng(seed);
    const double gain = 2.0 / (1.0 + cfg_.prelu_init * cfg_.prelu_init);
    auto fill_normal = [&](std::size_t idx, double stddev) {
      std::normal_distribution<double> dist(0.0, stddev);
      for (auto& v : w[idx]) v = static_cast<Scalar>(dist(rng));
    };
    auto init_block = [&](const ConvBlock& b) {
      fill_normal(b.weight, std::sqrt(gain / (9.0 * b.cin)));
      w[b.gamma].setOnes();
      w[b.running_var].setOnes();
      w[b.slope].setConstant(static_cast<Scalar>(cfg_.prelu_init));
    };
    for (int l = 0; l < cfg_.depth; ++l) {
      init_block(enc_[l][0]);
      init_block(enc_[l][1]);
    }
    for (int l = cfg_.depth - 2; l >= 0; --l) {
      fill_normal(up_[l].weight, std::sqrt(1.0 / up_[l].cin));
      init_block(dec_[l][0]);
      init_block(dec_[l][1]);
    }
    fill_normal(head_w_, std::sqrt(1.0 / cfg_.base_channels));
    return w;
  }

  void check_input(const Weights& w, const Map& x) const {
    if (!w.combinable_with(layout_))
      throw std::invalid_argument("weights fingerprint '" + w.fingerprint() + "' does not match network '" +
                                  layout_.fingerprint() + "'");
    if (x.channels() != cfg_.in_channels)
      throw ShapeError("expected " + std::to_string(cfg_.in_channels) + " input channels, got " +
                       std::to_string(x.channels()));
    const int m = cfg_.spatial_multiple();
    if (x.height % m != 0 || x.width % m != 0 || x.height == 0 || x.width == 0)
      throw ShapeError("input " + std::to_string(x.height) + "x" + std::to_string(x.width) +
                       " is not divisible by " + std::to_string(m) + " (depth " + std::to_string(cfg_.depth) + ")");
  }

  /// Inference pass with running batch-norm statistics.
  Map forward(const Weights& w, const Map& x) const {
    check_input(w, x);
    std::vector<Map> skips;
    Map h = x;
    for (int l = 0; l < cfg_.depth; ++l) {
      h = block_eval(w, enc_[l][0], h);
      h = block_eval(w, enc_[l][1], h);
      skips.push_back(h);
    }
    for (int l = cfg_.depth - 2; l >= 0; --l) {
      Map u = nn::upconv2x2_forward<Scalar>(up_weight(w, up_[l]), vec(w, up_[l].bias), h);
      h = block_eval(w, dec_[l][0], concat(skips[l], u));
      h = block_eval(w, dec_[l][1], h);
    }
    return head(w, h);
  }

  /// Training-mode forward and backward pass. Batch-norm running statistics
  /// in `w` are updated; gradients of the mean cross-entropy against
  /// `targets` (2 x positions, per-voxel distributions) land in `grad`,
  /// which is resized to the weight layout. Returns the loss.
  Scalar loss_and_gradient(Weights& w, const Map& x, const Matrix& targets, Weights& grad) const {
    check_input(w, x);
    grad = layout_;
    Tape tape;
    Map h = x;
    tape.enc.resize(cfg_.depth);
    for (int l = 0; l < cfg_.depth; ++l) {
      h = block_train(w, enc_[l][0], h, tape.enc[l][0]);
      h = block_train(w, enc_[l][1], h, tape.enc[l][1]);
      tape.skips.push_back(h);
    }
    tape.dec.resize(dec_.size());
    tape.up_in.resize(up_.size());
    for (int l = cfg_.depth - 2; l >= 0; --l) {
      tape.up_in[l] = h;
      Map u = nn::upconv2x2_forward<Scalar>(up_weight(w, up_[l]), vec(w, up_[l].bias), h);
      h = block_train(w, dec_[l][0], concat(tape.skips[l], u), tape.dec[l][0]);
      h = block_train(w, dec_[l][1], h, tape.dec[l][1]);
    }
    const Map logits = head(w, h);
    Matrix dlogits;
    const Scalar loss = nn::cross_entropy2<Scalar>(logits.data, targets, &dlogits);

    // Head.
    const auto hw = head_matrix(w);
    grad_matrix(grad, head_w_, cfg_.out_channels, cfg_.base_channels).noalias() += dlogits * h.data.transpose();
    grad[head_b_] += dlogits.rowwise().sum().array();
    Map dh = h;
    dh.data.noalias() = hw.transpose() * dlogits;

    // Decoder, top level first.
    std::vector<Map> dskips(static_cast<std::size_t>(cfg_.depth));
    for (int l = 0; l <= cfg_.depth - 2; ++l) {
      dh = block_backward(w, dec_[l][1], tape.dec[l][1], dh, grad);
      Map dcat = block_backward(w, dec_[l][0], tape.dec[l][0], dh, grad);
      const int cs = tape.skips[l].channels();
      dskips[l] = tape.skips[l];
      dskips[l].data = dcat.data.topRows(cs);
      Map du = tape.skips[l];
      du.data = dcat.data.bottomRows(dcat.channels() - cs);
      const Map& in = tape.up_in[l];
      const Matrix dm = nn::upconv2x2_gather(du, in.height, in.width);
      const auto& uc = up_[l];
      grad_matrix(grad, uc.weight, uc.cin, Eigen::Index{uc.cout} * 4).noalias() += in.data * dm.transpose();
      grad[uc.bias] += du.data.rowwise().sum().array();
      dh = in;
      dh.data.noalias() = up_weight(w, uc).transpose() * dm;
    }
    // dh is now the gradient at the bottleneck output.
    for (int l = cfg_.depth - 1; l >= 0; --l) {
      if (l < cfg_.depth - 1) dh.data += dskips[l].data;
      dh = block_backward(w, enc_[l][1], tape.enc[l][1], dh, grad);
      dh = block_backward(w, enc_[l][0], tape.enc[l][0], dh, grad, l > 0);
    }
    return loss;
  }

  /// Mean cross-entropy of an inference-mode forward pass.
  Scalar loss(const Weights& w, const Map& x, const Matrix& targets) const {
    return nn::cross_entropy2<Scalar>(forward(w, x).data, targets, nullptr);
  }

 private:
  struct ConvBlock {
    int cin, cout, stride;
    std::size_t weight, bias, gamma, beta, running_mean, running_var, slope;
  };
  struct UpConv {
    int cin, cout;
    std::size_t weight, bias;
  };
  struct BlockTape {
    int in_batch = 0, in_height = 0, in_width = 0;
    Matrix col;
    nn::BatchNormCache<Scalar> bn;
    Matrix pre;
  };
  struct Tape {
    std::vector<std::array<BlockTape, 2>> enc, dec;
    std::vector<Map> skips, up_in;
  };

  ConvBlock add_block(const std::string& p, int cin, int cout, int stride) {
    ConvBlock b{cin, cout, stride, 0, 0, 0, 0, 0, 0, 0};
    b.weight = layout_.add(p + ".conv.weight", {cout, cin, 3, 3});
    b.bias = layout_.add(p + ".conv.bias", {cout});
    b.gamma = layout_.add(p + ".norm.weight", {cout});
    b.beta = layout_.add(p + ".norm.bias", {cout});
    b.running_mean = layout_.add(p + ".norm.running_mean", {cout}, false);
    b.running_var = layout_.add(p + ".norm.running_var", {cout}, false);
    b.slope = layout_.add(p + ".act.weight", {1});
    return b;
  }

  static Eigen::Map<const Vector> vec(const Weights& w, std::size_t i) {
    return {w[i].data(), w[i].size()};
  }
  static Eigen::Map<Vector> vec(Weights& w, std::size_t i) { return {w[i].data(), w[i].size()}; }
  static Eigen::Map<Matrix> grad_matrix(Weights& g, std::size_t i, Eigen::Index rows, Eigen::Index cols) {
    return {g[i].data(), rows, cols};
  }
  static Eigen::Map<const Matrix> conv_weight(const Weights& w, const ConvBlock& b) {
    return {w[b.weight].data(), b.cout, Eigen::Index{b.cin} * 9};
  }
  // Stored as [cin, cout, 2, 2]; the GEMM wants (cout*4) x cin.
  static Matrix up_weight(const Weights& w, const UpConv& u) {
    return Eigen::Map<const Matrix>(w[u.weight].data(), u.cin, Eigen::Index{u.cout} * 4).transpose();
  }
  Eigen::Map<const Matrix> head_matrix(const Weights& w) const {
    return {w[head_w_].data(), cfg_.out_channels, cfg_.base_channels};
  }

  Map head(const Weights& w, const Map& h) const {
    Map out(cfg_.out_channels, h.batch, h.height, h.width);
    out.data.noalias() = head_matrix(w) * h.data;
    out.data.colwise() += vec(w, head_b_);
    return out;
  }

  static Map concat(const Map& a, const Map& b) {
    Map out(a.channels() + b.channels(), a.batch, a.height, a.width);
    out.data.topRows(a.channels()) = a.data;
    out.data.bottomRows(b.channels()) = b.data;
    return out;
  }

  Map block_eval(const Weights& w, const ConvBlock& b, const Map& in) const {
    const Matrix col = nn::im2col3x3(in, b.stride);
    Map out(b.cout, in.batch, (in.height - 1) / b.stride + 1, (in.width - 1) / b.stride + 1);
    out.data.noalias() = conv_weight(w, b) * col;
    out.data.colwise() += vec(w, b.bias);
    nn::batch_norm_eval<Scalar>(out.data, vec(w, b.gamma), vec(w, b.beta), vec(w, b.running_mean),
                                vec(w, b.running_var), static_cast<Scalar>(cfg_.bn_eps));
    nn::prelu_forward(out.data, w[b.slope][0]);
    return out;
  }

  Map block_train(Weights& w, const ConvBlock& b, const Map& in, BlockTape& t) const {
    t.in_batch = in.batch;
    t.in_height = in.height;
    t.in_width = in.width;
    t.col = nn::im2col3x3(in, b.stride);
    Map out(b.cout, in.batch, (in.height - 1) / b.stride + 1, (in.width - 1) / b.stride + 1);
    out.data.noalias() = conv_weight(w, b) * t.col;
    out.data.colwise() += vec(w, b.bias);
    nn::batch_norm_train<Scalar>(out.data, vec(w, b.gamma), vec(w, b.beta), vec(w, b.running_mean),
                                 vec(w, b.running_var), static_cast<Scalar>(cfg_.bn_momentum),
                                 static_cast<Scalar>(cfg_.bn_eps), t.bn);
    t.pre = out.data;
    nn::prelu_forward(out.data, w[b.slope][0]);
    return out;
  }

  Map block_backward(const Weights& w, const ConvBlock& b, const BlockTape& t, const Map& dy, Weights& g,
                     bool need_input_grad = true) const {
    Scalar dslope = 0;
    const Matrix dpre = nn::prelu_backward<Scalar>(dy.data, t.pre, w[b.slope][0], dslope);
    g[b.slope][0] += dslope;
    const Matrix dz = nn::batch_norm_backward<Scalar>(dpre, vec(w, b.gamma), t.bn, vec(g, b.gamma), vec(g, b.beta));
    grad_matrix(g, b.weight, b.cout, Eigen::Index{b.cin} * 9).noalias() += dz * t.col.transpose();
    g[b.bias] += dz.rowwise().sum().array();
    if (!need_input_grad) return {};
    const Matrix dcol = conv_weight(w, b).transpose() * dz;
    return nn::col2im3x3<Scalar>(dcol, b.cin, t.in_batch, t.in_height, t.in_width, b.stride);
  }

  UNetConfig cfg_;
  Weights layout_;
  std::vector<std::array<ConvBlock, 2>> enc_, dec_;
  std::vector<UpConv> up_;
  std::size_t head_w_ = 0, head_b_ = 0;
};

}  // namespace fedseg
