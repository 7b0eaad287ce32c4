#pragma once

#include <filesystem>
#include <string>
#include <unistd.h>

#include "acctdst/experiment.hpp"

namespace acctdst::test {

inline std::string temp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() /
           ("acctdst-" + name + "-" + std::to_string(::getpid()));
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p.string();
}

/// Open-valued ontology over the given canonical slot names.
inline Ontology open_ontology(const std::vector<std::string>& names) {
  std::vector<Ontology::SlotSpec> specs;
  for (const auto& n : names) specs.push_back({SlotId::parse(n), std::nullopt});
  return Ontology(std::move(specs));
}

inline SynthConfig small_synth(std::size_t n_train, std::size_t n_eval, std::uint64_t seed = 1) {
  SynthConfig c;
  c.n_train = n_train;
  c.n_validation = n_eval;
  c.n_test = n_eval;
  c.seed = seed;
  return c;
}

/// Reduced pipeline config: small corpus, small model, few epochs.
inline json small_config_json(std::size_t n_train = 40, std::size_t n_eval = 12,
                              std::size_t epochs = 3) {
  return {{"corpus", {{"synth", small_synth(n_train, n_eval).to_json()}}},
          {"model", {{"d_model", 16}, {"n_layers", 1}, {"n_heads", 2}, {"max_seq_len", 160}}},
          {"training",
           {{"learning_rate", 3e-3}, {"epochs", epochs}, {"batch_size", 4}, {"max_context_len", 128}}},
          {"experiment", {{"seeds", {1}}}}};
}

/// Everything needed to decode with a trained toy model.
struct ToyModel {
  AppConfig cfg;
  Corpora data;
  Vocabulary vocab;
  TrainedModel<float> model;
  std::string checkpoint_path;
};

/// A toy model trained once per process and saved to a checkpoint file.
inline const ToyModel& toy_model() {
  static const ToyModel toy = [] {
    ToyModel t{resolve_config(small_config_json(60, 12, 25)), {}, {}, {}, {}};
    t.data = load_corpora(t.cfg);
    t.vocab = vocab_for(t.cfg, t.data);
    t.model = train_model(t.cfg, t.data, t.vocab, 0.25, 1);
    t.checkpoint_path = temp_dir("toy") + "/toy.ckpt";
    save_checkpoint(t.checkpoint_path, t.model.params, t.data.ontology, t.vocab,
                    checkpoint_metadata(t.model, t.cfg, Thresholds{0.1, 0.5}));
    return t;
  }();
  return toy;
}

}  // namespace acctdst::test
