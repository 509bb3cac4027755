#pragma once

#include <string>
#include <vector>

#include "lhdff/nn.hpp"
#include "lhdff/ops.hpp"

namespace lhdff {

// Log-domain vocabulary scores from the dual decoder. p_fusion is the
// elementwise sum of the two log-softmax outputs and is deliberately left
// unnormalized.
template <class S>
struct FusedDistribution {
  TensorT<S> p_td1;    // B x L x m
  TensorT<S> p_td2;    // B x L x m
  TensorT<S> p_fusion; // B x L x m
};

// Builds the fused distribution from the two head logit tensors.
template <class S>
FusedDistribution<S> fuse_logits(const TensorT<S>& logits_td1, const TensorT<S>& logits_td2) {
  FusedDistribution<S> dist;
  dist.p_td1 = log_softmax(logits_td1);
  dist.p_td2 = log_softmax(logits_td2);
  dist.p_fusion = add(dist.p_td1, dist.p_td2);
  return dist;
}

// Post-norm transformer decoder layer: masked self-attention, cross-attention
// to the encoder memory, position-wise feed-forward; residual + layer norm
// around each sublayer.
template <class S>
class DecoderLayer {
 public:
  DecoderLayer() = default;
  DecoderLayer(size_t width, size_t heads, size_t ffn_width, double dropout_p, RngStream& rng,
               ParamRegistry<S>& reg, const std::string& prefix)
      : drop_(dropout_p) {
    self_attn = MultiHeadAttention<S>(width, heads, rng, reg, prefix + ".self_attn");
    cross_attn = MultiHeadAttention<S>(width, heads, rng, reg, prefix + ".cross_attn");
    ffn1 = LinearLayer<S>(width, ffn_width, rng, reg, prefix + ".ffn1");
    ffn2 = LinearLayer<S>(ffn_width, width, rng, reg, prefix + ".ffn2");
    ln1 = LayerNormLayer<S>(width, reg, prefix + ".ln1");
    ln2 = LayerNormLayer<S>(width, reg, prefix + ".ln2");
    ln3 = LayerNormLayer<S>(width, reg, prefix + ".ln3");
  }

  TensorT<S> forward(const TensorT<S>& x, const TensorT<S>& memory, const AttnMask& memory_mask,
                     bool training, RngStream* rng) {
    auto sa = self_attn.forward(x, x, x, AttnMask::causal());
    auto h = ln1.forward(add(x, drop_.forward(sa, training, rng)));
    auto ca = cross_attn.forward(h, memory, memory, memory_mask);
    h = ln2.forward(add(h, drop_.forward(ca, training, rng)));
    auto ff = ffn2.forward(relu(ffn1.forward(h)));
    return ln3.forward(add(h, drop_.forward(ff, training, rng)));
  }

  MultiHeadAttention<S> self_attn, cross_attn;
  LinearLayer<S> ffn1, ffn2;
  LayerNormLayer<S> ln1, ln2, ln3;

 private:
  DropoutLayer<S> drop_{0.0};
};

template <class S>
class TransformerDecoder {
 public:
  TransformerDecoder() = default;
  TransformerDecoder(size_t n_layers, size_t width, size_t heads, size_t ffn_width,
                     double dropout_p, RngStream& rng, ParamRegistry<S>& reg,
                     const std::string& prefix) {
    for (size_t i = 0; i < n_layers; ++i)
      layers_.emplace_back(width, heads, ffn_width, dropout_p, rng, reg,
                           prefix + ".layer" + std::to_string(i));
  }

  TensorT<S> forward(const TensorT<S>& x, const TensorT<S>& memory, const AttnMask& memory_mask,
                     bool training, RngStream* rng) {
    auto h = x;
    for (auto& layer : layers_) h = layer.forward(h, memory, memory_mask, training, rng);
    return h;
  }

  std::vector<DecoderLayer<S>>& layers() { return layers_; }

 private:
  std::vector<DecoderLayer<S>> layers_;
};

enum class EmbeddingMode { Frozen, Trainable, Imported };

// Shared word embedding matrix W (V x d). Frozen mode (the default) keeps the
// random initialization fixed for the whole run; imported mode loads an
// external table and then freezes it.
template <class S>
class WordEmbedding {
 public:
  WordEmbedding() = default;
  WordEmbedding(size_t vocab, size_t d, RngStream& rng, ParamRegistry<S>& reg,
                const std::string& prefix)
      : d_(d) {
    table = reg.add_param(prefix + ".weight",
                          rand_normal<S>({vocab, d}, 0.0, 1.0 / std::sqrt(static_cast<double>(d)),
                                         rng));
    table.set_requires_grad(false);  // frozen by default
  }

  void set_mode(EmbeddingMode mode) {
    mode_ = mode;
    table.set_requires_grad(mode == EmbeddingMode::Trainable);
  }

  void import_table(const std::vector<float>& values, size_t vocab, size_t d) {
    require<ConfigError>(vocab == table.dim(0) && d == table.dim(1),
                         "imported embedding table is " + std::to_string(vocab) + "x" +
                             std::to_string(d) + ", model expects " +
                             shape_str(table.shape()));
    auto dst = table.mutable_data();
    for (size_t i = 0; i < values.size(); ++i) dst[i] = static_cast<S>(values[i]);
    set_mode(EmbeddingMode::Imported);
    table.set_requires_grad(false);
  }

  // sqrt(d)-scaled lookup, the standard transformer convention.
  TensorT<S> lookup(const std::vector<int32_t>& ids, Shape leading) const {
    return scale(embedding(table, ids, std::move(leading)),
                 static_cast<S>(std::sqrt(static_cast<double>(d_))));
  }

  EmbeddingMode mode() const { return mode_; }

  TensorT<S> table;

 private:
  size_t d_ = 0;
  EmbeddingMode mode_ = EmbeddingMode::Frozen;
};

}  // namespace lhdff
