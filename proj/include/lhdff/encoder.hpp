#pragma once

#include <array>
#include <string>
#include <vector>

#include "lhdff/audio.hpp"
#include "lhdff/nn.hpp"
#include "lhdff/ops.hpp"

namespace lhdff {

// Batched log-mel input for the encoder: items are zero-padded in time to the
// batch maximum, with per-item valid frame counts carried alongside.
template <class S>
struct MelBatchT {
  TensorT<S> mel;           // N x 1 x T_max x n_mels
  std::vector<int> frames;  // valid input frames per item

  static MelBatchT from_spectrograms(const std::vector<const MelSpectrogram*>& mels) {
    require<DataError>(!mels.empty(), "empty mel batch");
    size_t n_mels = mels[0]->n_mels;
    size_t t_max = 0;
    for (const auto* m : mels) {
      require<ShapeError>(m->n_mels == n_mels, "mel batch mixes bin counts");
      t_max = std::max(t_max, m->frames);
    }
    MelBatchT batch;
    std::vector<S> data(mels.size() * t_max * n_mels, S(0));
    for (size_t i = 0; i < mels.size(); ++i) {
      for (size_t t = 0; t < mels[i]->frames; ++t)
        for (size_t b = 0; b < n_mels; ++b)
          data[(i * t_max + t) * n_mels + b] = static_cast<S>(mels[i]->at(t, b));
      batch.frames.push_back(static_cast<int>(mels[i]->frames));
    }
    batch.mel = TensorT<S>({mels.size(), 1, t_max, n_mels}, std::move(data));
    return batch;
  }
};

template <class S>
struct EncoderOutput {
  TensorT<S> x_fusion;            // N x T x 128
  TensorT<S> x_high;              // N x T x 128
  std::vector<int> valid_frames;  // per item, in output frame units
};

// Intermediates exposed for shape-contract and ablation tests.
template <class S>
struct EncoderTrace {
  TensorT<S> x3_pooled;      // N x T' x 256
  TensorT<S> x_final;        // N x T x 1024
  TensorT<S> x_low;          // N x T' x 128
  TensorT<S> x_low_aligned;  // N x T x 128
};

// CNN10-style stack with a low-dimensional tap after block 3. The block-3 and
// block-4 outputs are frequency-pooled, block 4 feeds the 1024-wide final
// linear, and both paths project to width 128; the fused feature is the
// elementwise sum after time alignment.
template <class S>
class RpannsEncoder {
 public:
  static constexpr size_t kMinFrames = 16;  // four 2x2 pools must leave T >= 1
  static constexpr std::array<size_t, 4> kChannels{64, 128, 256, 512};

  RpannsEncoder() = default;

  RpannsEncoder(RngStream& rng, ParamRegistry<S>& reg, const std::string& prefix = "encoder") {
    size_t cin = 1;
    for (size_t i = 0; i < 4; ++i) {
      std::string bp = prefix + ".block" + std::to_string(i + 1);
      blocks_[i].conv1 = Conv2dLayer<S>(cin, kChannels[i], rng, reg, bp + ".conv1");
      blocks_[i].bn1 = BatchNorm2dLayer<S>(kChannels[i], reg, bp + ".bn1");
      blocks_[i].conv2 = Conv2dLayer<S>(kChannels[i], kChannels[i], rng, reg, bp + ".conv2");
      blocks_[i].bn2 = BatchNorm2dLayer<S>(kChannels[i], reg, bp + ".bn2");
      cin = kChannels[i];
    }
    f_final = LinearLayer<S>(512, 1024, rng, reg, prefix + ".f_final");
    f_high = LinearLayer<S>(1024, 128, rng, reg, prefix + ".f_high");
    f_low = LinearLayer<S>(256, 128, rng, reg, prefix + ".f_low");
  }

  static size_t frames_after_pools(size_t t_in, int n_pools) {
    for (int i = 0; i < n_pools; ++i) t_in /= 2;
    return t_in;
  }

  // Mean-pool by 2 when the low path is longer (the pooling chain makes
  // T' ~ 2T), then truncate or zero-pad the leftover off-by-one frames.
  TensorT<S> align_time(const TensorT<S>& x_low, size_t target_t) const {
    size_t t = x_low.dim(1);
    if (t == target_t) return x_low;
    if (t < target_t) return pad_axis1(x_low, target_t);
    auto pooled = avg_pool_time(x_low);
    size_t pt = pooled.dim(1);
    if (pt == target_t) return pooled;
    if (pt > target_t) return slice_axis1(pooled, target_t);
    return pad_axis1(pooled, target_t);
  }

  EncoderOutput<S> encode(const MelBatchT<S>& batch, bool training, bool with_fusion = true,
                          EncoderTrace<S>* trace = nullptr) {
    const auto& mel = batch.mel;
    require<ShapeError>(mel.rank() == 4 && mel.dim(1) == 1 && mel.dim(3) == kNumMels,
                        "encoder expects N x 1 x T x 64 input, got " + shape_str(mel.shape()));
    size_t t_in = mel.dim(2);
    require<DataError>(t_in >= kMinFrames,
                       "input too short: " + std::to_string(t_in) + " frames, need >= " +
                           std::to_string(kMinFrames));
    for (int f : batch.frames)
      require<DataError>(f >= static_cast<int>(kMinFrames),
                         "batch item too short: " + std::to_string(f) + " valid frames");

    auto h = blocks_[0].forward(mel, training);
    h = blocks_[1].forward(h, training);
    auto b3 = blocks_[2].forward(h, training);
    auto x3_pooled = freq_mean(b3);  // N x T' x 256
    auto b4 = blocks_[3].forward(b3, training);
    auto x4_pooled = freq_mean(b4);  // N x T x 512
    auto x_final = f_final.forward(x4_pooled);

    EncoderOutput<S> out;
    out.x_high = relu(f_high.forward(x_final));
    size_t target_t = out.x_high.dim(1);
    if (with_fusion) {
      auto x_low = relu(f_low.forward(x3_pooled));
      auto aligned = align_time(x_low, target_t);
      out.x_fusion = add(out.x_high, aligned);
      if (trace) {
        trace->x_low = x_low;
        trace->x_low_aligned = aligned;
      }
    }
    for (int f : batch.frames)
      out.valid_frames.push_back(
          static_cast<int>(frames_after_pools(static_cast<size_t>(f), 4)));
    if (trace) {
      trace->x3_pooled = x3_pooled;
      trace->x_final = x_final;
    }
    return out;
  }

  struct Block {
    Conv2dLayer<S> conv1, conv2;
    BatchNorm2dLayer<S> bn1, bn2;

    TensorT<S> forward(const TensorT<S>& x, bool training) {
      auto h = relu(bn1.forward(conv1.forward(x), training));
      h = relu(bn2.forward(conv2.forward(h), training));
      return avg_pool2d(h);
    }
  };

  Block& block(size_t i) { return blocks_[i]; }

  LinearLayer<S> f_final, f_high, f_low;

 private:
  std::array<Block, 4> blocks_;
};

}  // namespace lhdff
