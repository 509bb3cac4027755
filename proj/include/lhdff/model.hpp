#pragma once

#include <string>
#include <vector>

#include "lhdff/decoder.hpp"
#include "lhdff/encoder.hpp"
#include "lhdff/text.hpp"

namespace lhdff {

struct ModelConfig {
  size_t vocab_size = 0;
  size_t d_model = 128;
  size_t heads = 4;
  size_t dec_layers = 2;
  size_t ffn_width = 512;
  double dropout = 0.1;
  size_t max_len = 64;  // positional encoding horizon
};

enum class RunMode { Dual, FusionOnly, HighOnly };

inline std::string to_string(RunMode mode) {
  switch (mode) {
    case RunMode::Dual: return "dual";
    case RunMode::FusionOnly: return "fusion_only";
    case RunMode::HighOnly: return "high_only";
  }
  return "dual";
}

inline RunMode parse_run_mode(const std::string& s) {
  if (s == "dual") return RunMode::Dual;
  if (s == "fusion_only" || s == "fusion-only") return RunMode::FusionOnly;
  if (s == "high_only" || s == "high-only") return RunMode::HighOnly;
  throw ConfigError("unknown mode '" + s + "' (expected dual, fusion-only or high-only)");
}

struct ParamReportRow {
  std::string name;
  Shape shape;
  size_t count = 0;
};

struct ParamReport {
  std::vector<ParamReportRow> rows;
  size_t encoder_total = 0;
  size_t decoder_total = 0;
  size_t total = 0;
};

// The whole LHDFF stack: RPANNs encoder, shared word embedding, two
// transformer decoders with their vocabulary heads, log-softmax fusion.
// The run mode picks which decoder paths execute; parameters are identical
// across modes so checkpoints stay interchangeable.
template <class S>
class LhdffModelT {
 public:
  LhdffModelT(const ModelConfig& cfg, uint64_t seed) : cfg_(cfg) {
    require<ConfigError>(cfg.vocab_size >= Vocabulary::kReserved,
                         "vocab size must cover the reserved tokens");
    RngStream rng(derive_seed(seed, "init"));
    encoder_ = RpannsEncoder<S>(rng, reg_, "encoder");
    embedding_ = WordEmbedding<S>(cfg.vocab_size, cfg.d_model, rng, reg_, "decoder.embedding");
    td1_ = TransformerDecoder<S>(cfg.dec_layers, cfg.d_model, cfg.heads, cfg.ffn_width,
                                 cfg.dropout, rng, reg_, "decoder.td1");
    head1_ = LinearLayer<S>(cfg.d_model, cfg.vocab_size, rng, reg_, "decoder.head1");
    td2_ = TransformerDecoder<S>(cfg.dec_layers, cfg.d_model, cfg.heads, cfg.ffn_width,
                                 cfg.dropout, rng, reg_, "decoder.td2");
    head2_ = LinearLayer<S>(cfg.d_model, cfg.vocab_size, rng, reg_, "decoder.head2");
    posenc_ = sinusoidal_table<S>(cfg.max_len, cfg.d_model);
  }

  const ModelConfig& config() const { return cfg_; }
  ParamRegistry<S>& registry() { return reg_; }
  RpannsEncoder<S>& encoder() { return encoder_; }
  WordEmbedding<S>& word_embedding() { return embedding_; }
  TransformerDecoder<S>& td1() { return td1_; }
  TransformerDecoder<S>& td2() { return td2_; }
  LinearLayer<S>& head1() { return head1_; }
  LinearLayer<S>& head2() { return head2_; }

  EncoderOutput<S> encode(const MelBatchT<S>& batch, bool training, RunMode mode,
                          EncoderTrace<S>* trace = nullptr) {
    bool with_fusion = mode != RunMode::HighOnly;
    return encoder_.encode(batch, training, with_fusion, trace);
  }

  // Teacher-forced scoring of a token prefix batch against encoder memory.
  // Position t of the output conditions on tokens 0..t only.
  FusedDistribution<S> decode_step_batch(const std::vector<int32_t>& tokens, size_t batch,
                                         size_t length, const EncoderOutput<S>& memory,
                                         RunMode mode, bool training = false,
                                         uint64_t step_seed = 0) {
    require<ShapeError>(tokens.size() == batch * length, "token batch extent mismatch");
    require<ConfigError>(length <= cfg_.max_len,
                         "sequence length " + std::to_string(length) +
                             " exceeds the positional encoding horizon");
    auto emb = embedding_.lookup(tokens, {batch, length});
    auto x = add_row_table(emb, posenc_);
    auto mem_mask = AttnMask::from_key_valid(memory.valid_frames);

    FusedDistribution<S> dist;
    if (mode != RunMode::HighOnly) {
      RngStream rng1(derive_seed(step_seed, "dropout.td1"));
      auto h1 = td1_.forward(x, memory.x_fusion, mem_mask, training, &rng1);
      dist.p_td1 = log_softmax(head1_.forward(h1));
    }
    if (mode != RunMode::FusionOnly) {
      RngStream rng2(derive_seed(step_seed, "dropout.td2"));
      auto h2 = td2_.forward(x, memory.x_high, mem_mask, training, &rng2);
      dist.p_td2 = log_softmax(head2_.forward(h2));
    }
    if (mode == RunMode::Dual) dist.p_fusion = add(dist.p_td1, dist.p_td2);
    return dist;
  }

  // The distribution decoded/trained against under the given mode.
  const TensorT<S>& scores(const FusedDistribution<S>& dist, RunMode mode) const {
    switch (mode) {
      case RunMode::Dual: return dist.p_fusion;
      case RunMode::FusionOnly: return dist.p_td1;
      case RunMode::HighOnly: return dist.p_td2;
    }
    return dist.p_fusion;
  }

  TensorT<S> loss_for_mode(const FusedDistribution<S>& dist, RunMode mode,
                           const std::vector<int32_t>& targets) {
    return nll_masked(scores(dist, mode), targets, Vocabulary::kPad);
  }

  void freeze_embedding(EmbeddingMode mode) { embedding_.set_mode(mode); }

  // Ablation switch: a zeroed low projection makes x_fusion == x_high exactly.
  void zero_low_projection() {
    std::fill(encoder_.f_low.weight.mutable_data().begin(),
              encoder_.f_low.weight.mutable_data().end(), S(0));
    std::fill(encoder_.f_low.bias.mutable_data().begin(),
              encoder_.f_low.bias.mutable_data().end(), S(0));
  }

  // Copies every TD1/head1 parameter onto its TD2/head2 counterpart.
  void share_decoder_params() {
    for (auto& [name, t] : reg_.params) {
      std::string other;
      if (name.starts_with("decoder.td1."))
        other = "decoder.td2." + name.substr(12);
      else if (name.starts_with("decoder.head1."))
        other = "decoder.head2." + name.substr(14);
      else
        continue;
      auto* dst = reg_.find_param(other);
      require<Error>(dst != nullptr, "missing twin parameter " + other);
      std::copy(t.data().begin(), t.data().end(), dst->mutable_data().begin());
    }
  }

  ParamReport count_parameters() const {
    ParamReport report;
    for (const auto& [name, t] : reg_.params) {
      report.rows.push_back({name, t.shape(), t.size()});
      report.total += t.size();
      if (name.starts_with("encoder."))
        report.encoder_total += t.size();
      else
        report.decoder_total += t.size();
    }
    return report;
  }

 private:
  ModelConfig cfg_;
  ParamRegistry<S> reg_;
  RpannsEncoder<S> encoder_;
  WordEmbedding<S> embedding_;
  TransformerDecoder<S> td1_, td2_;
  LinearLayer<S> head1_, head2_;
  std::vector<S> posenc_;
};

using LhdffModel = LhdffModelT<float>;

// Cross-entropy over the fused distribution, averaged over non-pad target
// tokens. By log additivity it equals CE(p_td1) + CE(p_td2).
template <class S>
TensorT<S> fused_ce_loss(const FusedDistribution<S>& dist, const std::vector<int32_t>& targets,
                         int32_t pad_id = Vocabulary::kPad) {
  return nll_masked(dist.p_fusion, targets, pad_id);
}

// Right-shifted teacher forcing: input [<sos>, w1..wn, <pad>...] predicts
// [w1..wn, <eos>, <pad>...]; both views are one shorter than the stored rows.
struct TeacherForcing {
  std::vector<int32_t> inputs;
  std::vector<int32_t> targets;
  size_t batch = 0;
  size_t length = 0;
};

inline TeacherForcing teacher_forcing_split(const CaptionBatch& captions) {
  TeacherForcing tf;
  tf.batch = captions.batch;
  tf.length = captions.length - 1;
  for (size_t b = 0; b < captions.batch; ++b)
    for (size_t l = 0; l < tf.length; ++l) {
      tf.inputs.push_back(captions.at(b, l));
      tf.targets.push_back(captions.at(b, l + 1));
    }
  return tf;
}

}  // namespace lhdff
