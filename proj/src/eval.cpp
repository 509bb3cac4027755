#include "lhdff/eval.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <set>
#include <sstream>

#include <json.hpp>

#include "lhdff/checkpoint.hpp"
#include "lhdff/decode.hpp"
#include "lhdff/train.hpp"

namespace lhdff {

CheckpointEval evaluate_checkpoint(const std::string& checkpoint_path, const Vocabulary& vocab,
                                   const DatasetManifest& test, const EvalOptions& opts) {
  require<DataError>(!test.items.empty(), "evaluation manifest is empty");
  auto meta = peek_checkpoint(checkpoint_path);
  TrainConfig tcfg;
  ModelConfig mcfg;
  train_config_from_text(meta.config_text, &tcfg, &mcfg);
  require<DataError>(meta.vocab_hash == vocab.hash(),
                     "checkpoint '" + checkpoint_path +
                         "' was trained with a different vocabulary");

  LhdffModel model(mcfg, tcfg.seed);
  restore_train_checkpoint(checkpoint_path, model, nullptr, vocab.hash());

  CheckpointEval eval;
  eval.checkpoint_path = checkpoint_path;
  eval.mode = to_string(tcfg.mode);
  eval.vocab_hash = meta.vocab_hash;

  DatasetCache cache(test, vocab, tcfg.l_max);
  eval.test_loss = evaluate_loss(model, tcfg.mode, cache, opts.batch_size);

  EvalCorpus corpus;
  for (size_t i = 0; i < cache.items(); ++i) {
    auto ids = caption_tokens(model, tcfg.mode, cache.mel(i), opts.max_tokens, opts.beam,
                              opts.length_alpha);
    auto tokens = decode_tokens(ids, vocab);
    EvalItem item;
    item.hypothesis = tokens;
    item.references = cache.caption_tokens(i);
    corpus.push_back(std::move(item));

    std::string text;
    for (size_t t = 0; t < tokens.size(); ++t) {
      if (t) text += ' ';
      text += tokens[t];
    }
    eval.hypotheses.push_back(text);
    eval.clip_ids.push_back(
        std::filesystem::path(test.items[i].audio_path).filename().string());
  }
  eval.report = compute_metrics(corpus);
  return eval;
}

std::vector<CheckpointEval> run_ablation_eval(const std::vector<std::string>& checkpoint_paths,
                                              const Vocabulary& vocab,
                                              const DatasetManifest& test,
                                              const EvalOptions& opts) {
  require<ConfigError>(checkpoint_paths.size() == 3,
                       "ablation evaluation takes exactly three checkpoints "
                       "(dual, fusion-only, high-only)");
  const char* expected[] = {"dual", "fusion_only", "high_only"};
  for (size_t i = 0; i < 3; ++i)
    require<DataError>(std::filesystem::exists(checkpoint_paths[i]),
                       std::string("missing checkpoint for mode ") + expected[i] + ": '" +
                           checkpoint_paths[i] + "'");

  std::vector<CheckpointEval> evals;
  for (const auto& path : checkpoint_paths)
    evals.push_back(evaluate_checkpoint(path, vocab, test, opts));

  std::set<std::string> modes;
  for (const auto& e : evals) modes.insert(e.mode);
  require<DataError>(modes == std::set<std::string>{"dual", "fusion_only", "high_only"},
                     "ablation evaluation needs one checkpoint per mode "
                     "(dual, fusion_only, high_only)");
  for (const auto& e : evals)
    require<DataError>(e.vocab_hash == evals[0].vocab_hash,
                       "ablation checkpoints disagree on the vocabulary hash; refused");
  // fixed row order: dual, fusion_only, high_only
  std::sort(evals.begin(), evals.end(), [&](const CheckpointEval& a, const CheckpointEval& b) {
    auto rank = [&](const std::string& m) {
      return m == "dual" ? 0 : (m == "fusion_only" ? 1 : 2);
    };
    return rank(a.mode) < rank(b.mode);
  });
  return evals;
}

namespace {

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

}  // namespace

std::string metrics_csv(const std::vector<CheckpointEval>& evals) {
  std::string out = "model,BLEU1,BLEU2,BLEU3,BLEU4,ROUGEL,CIDEr\n";
  for (const auto& e : evals) {
    const auto& r = e.report.corpus;
    out += e.mode + "," + fmt(r.bleu1) + "," + fmt(r.bleu2) + "," + fmt(r.bleu3) + "," +
           fmt(r.bleu4) + "," + fmt(r.rougel) + "," + fmt(r.cider) + "\n";
  }
  return out;
}

std::string metrics_table(const std::vector<CheckpointEval>& evals) {
  std::ostringstream os;
  char line[160];
  std::snprintf(line, sizeof(line), "%-12s %8s %8s %8s %8s %8s %8s %10s\n", "model", "BLEU1",
                "BLEU2", "BLEU3", "BLEU4", "ROUGEL", "CIDEr", "test_loss");
  os << line;
  for (const auto& e : evals) {
    const auto& r = e.report.corpus;
    std::snprintf(line, sizeof(line), "%-12s %8.4f %8.4f %8.4f %8.4f %8.4f %8.4f %10.4f\n",
                  e.mode.c_str(), r.bleu1, r.bleu2, r.bleu3, r.bleu4, r.rougel, r.cider,
                  e.test_loss);
    os << line;
  }
  return os.str();
}

std::string per_item_jsonl(const CheckpointEval& eval) {
  std::string out;
  for (size_t i = 0; i < eval.hypotheses.size(); ++i) {
    nlohmann::ordered_json rec;
    rec["id"] = eval.clip_ids[i];
    rec["hypothesis"] = eval.hypotheses[i];
    const auto& row = eval.report.items[i];
    rec["BLEU1"] = row.bleu1;
    rec["BLEU2"] = row.bleu2;
    rec["BLEU3"] = row.bleu3;
    rec["BLEU4"] = row.bleu4;
    rec["ROUGEL"] = row.rougel;
    rec["CIDEr"] = row.cider;
    out += rec.dump() + "\n";
  }
  return out;
}

}  // namespace lhdff
