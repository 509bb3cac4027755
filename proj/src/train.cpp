#include "lhdff/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "lhdff/audio.hpp"
#include "lhdff/config.hpp"

namespace lhdff {

void TrainConfig::validate() const {
  require<ConfigError>(batch_size >= 1, "batch_size must be positive");
  require<ConfigError>(epochs >= 1, "epochs must be positive");
  require<ConfigError>(base_lr > 0, "base_lr must be positive");
  require<ConfigError>(warmup_epochs >= 1 && decay_every >= 1, "schedule fields must be positive");
  require<ConfigError>(warmup_epochs < epochs, "warmup_epochs must be below epochs");
  require<ConfigError>(l_max >= 3, "l_max too small for <sos>/<eos>");
  require<ConfigError>(dropout >= 0.0 && dropout < 1.0, "dropout must be in [0, 1)");
}

std::string train_config_to_text(const TrainConfig& cfg, const ModelConfig& mcfg) {
  std::map<std::string, std::string> kv;
  auto num = [](auto v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", static_cast<double>(v));
    return std::string(buf);
  };
  kv["batch_size"] = std::to_string(cfg.batch_size);
  kv["epochs"] = std::to_string(cfg.epochs);
  kv["base_lr"] = num(cfg.base_lr);
  kv["warmup_epochs"] = std::to_string(cfg.warmup_epochs);
  kv["decay_every"] = std::to_string(cfg.decay_every);
  kv["decay_factor"] = num(cfg.decay_factor);
  kv["seed"] = std::to_string(cfg.seed);
  kv["mode"] = to_string(cfg.mode);
  kv["l_max"] = std::to_string(cfg.l_max);
  kv["dropout"] = num(cfg.dropout);
  kv["augment"] = cfg.augment ? "1" : "0";
  kv["augment_time_masks"] = std::to_string(cfg.augment_policy.n_time_masks);
  kv["augment_time_width"] = std::to_string(cfg.augment_policy.max_time_width);
  kv["augment_freq_masks"] = std::to_string(cfg.augment_policy.n_freq_masks);
  kv["augment_freq_width"] = std::to_string(cfg.augment_policy.max_freq_width);
  kv["augment_mixture_prob"] = num(cfg.augment_policy.mixture_prob);
  kv["clip_norm"] = num(cfg.clip_norm);
  kv["vocab_size"] = std::to_string(mcfg.vocab_size);
  kv["d_model"] = std::to_string(mcfg.d_model);
  kv["heads"] = std::to_string(mcfg.heads);
  kv["dec_layers"] = std::to_string(mcfg.dec_layers);
  kv["ffn_width"] = std::to_string(mcfg.ffn_width);
  kv["max_len"] = std::to_string(mcfg.max_len);
  return config_to_text(kv);
}

void train_config_from_text(const std::string& text, TrainConfig* cfg, ModelConfig* mcfg) {
  auto kv = parse_config_text(text);
  auto get = [&](const char* key) -> const std::string& {
    auto it = kv.find(key);
    require<DataError>(it != kv.end(), std::string("config snapshot is missing '") + key + "'");
    return it->second;
  };
  if (cfg) {
    cfg->batch_size = std::stoi(get("batch_size"));
    cfg->epochs = std::stoi(get("epochs"));
    cfg->base_lr = std::stod(get("base_lr"));
    cfg->warmup_epochs = std::stoi(get("warmup_epochs"));
    cfg->decay_every = std::stoi(get("decay_every"));
    cfg->decay_factor = std::stod(get("decay_factor"));
    cfg->seed = std::stoull(get("seed"));
    cfg->mode = parse_run_mode(get("mode"));
    cfg->l_max = std::stoul(get("l_max"));
    cfg->dropout = std::stod(get("dropout"));
    cfg->augment = get("augment") == "1";
    cfg->augment_policy.n_time_masks = std::stoi(get("augment_time_masks"));
    cfg->augment_policy.max_time_width = std::stoi(get("augment_time_width"));
    cfg->augment_policy.n_freq_masks = std::stoi(get("augment_freq_masks"));
    cfg->augment_policy.max_freq_width = std::stoi(get("augment_freq_width"));
    cfg->augment_policy.mixture_prob = std::stod(get("augment_mixture_prob"));
    cfg->clip_norm = std::stod(get("clip_norm"));
  }
  if (mcfg) {
    mcfg->vocab_size = std::stoul(get("vocab_size"));
    mcfg->d_model = std::stoul(get("d_model"));
    mcfg->heads = std::stoul(get("heads"));
    mcfg->dec_layers = std::stoul(get("dec_layers"));
    mcfg->ffn_width = std::stoul(get("ffn_width"));
    mcfg->max_len = std::stoul(get("max_len"));
    mcfg->dropout = std::stod(get("dropout"));
  }
}

DatasetCache::DatasetCache(const DatasetManifest& manifest, const Vocabulary& vocab, size_t l_max,
                           const std::string& mel_cache_dir)
    : manifest_(&manifest), vocab_(&vocab), l_max_(l_max) {
  for (const auto& item : manifest.items) {
    std::string cache_path;
    if (!mel_cache_dir.empty()) {
      auto stem = std::filesystem::path(item.audio_path).stem().string();
      auto candidate = std::filesystem::path(mel_cache_dir) / (stem + ".lmel");
      if (std::filesystem::exists(candidate)) cache_path = candidate.string();
    }
    if (!cache_path.empty())
      mels_.push_back(read_mel_cache(cache_path));
    else
      mels_.push_back(log_mel(load_wav(item.audio_path)));

    std::vector<std::vector<std::string>> refs;
    for (const auto& caption : item.captions) refs.push_back(normalize_caption(caption));
    captions_.push_back(std::move(refs));
  }
  pairs_ = manifest.training_pairs();
}

namespace {

struct Batch {
  std::vector<size_t> item_indices;
  MelBatchT<float> mel;
  TeacherForcing tf;
  size_t target_tokens = 0;
};

Batch assemble_batch(const DatasetCache& data, const std::vector<std::pair<size_t, size_t>>& pairs,
                     size_t begin, size_t end, const std::vector<MelSpectrogram>* augmented) {
  Batch batch;
  std::vector<const MelSpectrogram*> mels;
  std::vector<std::vector<std::string>> captions;
  for (size_t i = begin; i < end; ++i) {
    auto [item, cap] = pairs[i];
    batch.item_indices.push_back(item);
    mels.push_back(augmented ? &(*augmented)[i - begin] : &data.mel(item));
    captions.push_back(data.caption_tokens(item)[cap]);
  }
  batch.mel = MelBatchT<float>::from_spectrograms(mels);
  auto caption_batch = CaptionBatch::from_token_lists(captions, data.vocab(), data.l_max());
  batch.tf = teacher_forcing_split(caption_batch);
  for (int32_t t : batch.tf.targets)
    if (t != Vocabulary::kPad) ++batch.target_tokens;
  return batch;
}

}  // namespace

double evaluate_loss(LhdffModel& model, RunMode mode, const DatasetCache& data,
                     size_t batch_size) {
  const auto& pairs = data.pairs();
  require<DataError>(!pairs.empty(), "evaluate_loss: empty dataset");
  double total = 0.0;
  size_t tokens = 0;
  for (size_t begin = 0; begin < pairs.size(); begin += batch_size) {
    size_t end = std::min(pairs.size(), begin + batch_size);
    auto batch = assemble_batch(data, pairs, begin, end, nullptr);
    auto memory = model.encode(batch.mel, false, mode);
    auto dist = model.decode_step_batch(batch.tf.inputs, batch.tf.batch, batch.tf.length, memory,
                                        mode, false, 0);
    auto loss = model.loss_for_mode(dist, mode, batch.tf.targets);
    total += static_cast<double>(loss.item()) * static_cast<double>(batch.target_tokens);
    tokens += batch.target_tokens;
  }
  return total / static_cast<double>(tokens);
}

TrainReport train_model(const TrainConfig& cfg, LhdffModel& model, AdamOptimizer<float>& opt,
                        const DatasetCache& train_data, const DatasetCache* val_data,
                        int start_epoch, int64_t start_global_step, std::ostream* log) {
  cfg.validate();
  require<DataError>(!train_data.pairs().empty(), "training dataset is empty");
  if (!cfg.out_dir.empty()) std::filesystem::create_directories(cfg.out_dir);

  const auto sched = cfg.schedule();
  const size_t n_pairs = train_data.pairs().size();
  const int64_t steps_per_epoch =
      static_cast<int64_t>((n_pairs + cfg.batch_size - 1) / cfg.batch_size);

  TrainReport report;
  int64_t global_step = start_global_step;
  const std::string config_text = train_config_to_text(cfg, model.config());

  for (int epoch = start_epoch; epoch < cfg.epochs; ++epoch) {
    // seeded epoch order; derived streams keep resume behavior identical
    std::vector<std::pair<size_t, size_t>> order = train_data.pairs();
    RngStream order_rng(derive_seed(cfg.seed, "order", {static_cast<uint64_t>(epoch)}));
    for (size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[order_rng.below(i)]);

    double epoch_loss_sum = 0.0;
    int64_t step = 0;
    for (size_t begin = 0; begin < order.size(); begin += cfg.batch_size, ++step) {
      size_t end = std::min(order.size(), begin + static_cast<size_t>(cfg.batch_size));

      std::vector<MelSpectrogram> augmented;
      const std::vector<MelSpectrogram>* aug_ptr = nullptr;
      if (cfg.augment) {
        RngStream aug_rng(derive_seed(cfg.seed, "augment",
                                      {static_cast<uint64_t>(epoch), static_cast<uint64_t>(step)}));
        bool mixture = aug_rng.uniform01() < cfg.augment_policy.mixture_prob;
        for (size_t i = begin; i < end; ++i) {
          const auto& self = train_data.mel(order[i].first);
          const MelSpectrogram* donor = nullptr;
          if (mixture) {
            size_t pick = begin + aug_rng.below(end - begin);
            donor = &train_data.mel(order[pick].first);
          }
          augmented.push_back(spec_augment(self, cfg.augment_policy,
                                           mixture ? MaskVariant::Mixture : MaskVariant::Zero,
                                           donor, aug_rng));
        }
        aug_ptr = &augmented;
      }
      auto batch = assemble_batch(train_data, order, begin, end, aug_ptr);

      double lr = lr_at(sched, epoch, step, steps_per_epoch);
      opt.zero_grad();
      float loss_value = 0.0f;
      {
        GradientTape tape;
        auto memory = model.encode(batch.mel, true, cfg.mode);
        uint64_t step_seed = derive_seed(
            cfg.seed, "dropout", {static_cast<uint64_t>(epoch), static_cast<uint64_t>(step)});
        auto dist = model.decode_step_batch(batch.tf.inputs, batch.tf.batch, batch.tf.length,
                                            memory, cfg.mode, true, step_seed);
        auto loss = model.loss_for_mode(dist, cfg.mode, batch.tf.targets);
        loss_value = loss.item();
        if (!std::isfinite(loss_value)) {
          std::string items;
          for (size_t idx : batch.item_indices) items += " " + std::to_string(idx);
          throw NumericError("non-finite loss at epoch " + std::to_string(epoch) + " step " +
                             std::to_string(step) + "; batch items:" + items);
        }
        tape.backward(loss);
      }
      if (cfg.clip_norm > 0) clip_global_norm(opt, cfg.clip_norm);
      opt.step(static_cast<float>(lr));

      char line[160];
      std::snprintf(line, sizeof(line), "%d %lld %.9g %.9g", epoch,
                    static_cast<long long>(global_step), lr, static_cast<double>(loss_value));
      report.step_lines.emplace_back(line);
      if (log) (*log) << line << "\n";
      epoch_loss_sum += loss_value;
      ++global_step;
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.mean_step_loss = epoch_loss_sum / static_cast<double>(steps_per_epoch);
    rec.eval_train_loss = evaluate_loss(model, cfg.mode, train_data,
                                        static_cast<size_t>(cfg.batch_size));
    double selection_loss = rec.eval_train_loss;
    if (val_data) {
      rec.val_loss = evaluate_loss(model, cfg.mode, *val_data,
                                   static_cast<size_t>(cfg.batch_size));
      selection_loss = rec.val_loss;
    }
    report.epochs.push_back(rec);

    if (!cfg.out_dir.empty()) {
      TrainCounters counters{epoch + 1, global_step, opt.step_count()};
      auto last = (std::filesystem::path(cfg.out_dir) / "last.ckpt").string();
      save_train_checkpoint(last, model, &opt, counters, train_data.vocab().hash(), config_text);
      report.last_checkpoint_path = last;
      if (report.best_epoch < 0 || selection_loss < report.best_loss) {
        report.best_epoch = epoch;
        report.best_loss = selection_loss;
        auto best = (std::filesystem::path(cfg.out_dir) / "best.ckpt").string();
        save_train_checkpoint(best, model, &opt, counters, train_data.vocab().hash(),
                              config_text);
        report.best_checkpoint_path = best;
      }
    } else if (report.best_epoch < 0 || selection_loss < report.best_loss) {
      report.best_epoch = epoch;
      report.best_loss = selection_loss;
    }

    if (cfg.stop_below_loss > 0 && rec.eval_train_loss < cfg.stop_below_loss) {
      report.stopped_early = true;
      break;
    }
  }

  if (!cfg.out_dir.empty()) {
    std::ofstream f(std::filesystem::path(cfg.out_dir) / "train_report.txt");
    for (const auto& line : report.step_lines) f << line << "\n";
  }
  return report;
}

}  // namespace lhdff
