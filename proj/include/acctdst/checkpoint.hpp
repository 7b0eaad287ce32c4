#pragma once

#include <cstring>
#include <string>

#include "acctdst/codec.hpp"
#include "acctdst/model.hpp"

namespace acctdst {

/// Container layout:
///   "ACCTDST1\n" | u64 header length | JSON header | raw little-endian tensors
/// The header carries the model config, ontology, vocabulary, their hashes,
/// free-form metadata and the tensor table (name, rows, cols) in storage order.
template <class T>
struct Checkpoint {
  ModelParameters<T> params;
  Ontology ontology;
  Vocabulary vocab;
  json metadata = json::object();
};

inline constexpr char kCheckpointMagic[] = "ACCTDST1\n";

template <class T>
std::string serialize_checkpoint(const ModelParameters<T>& params, const Ontology& ontology,
                                 const Vocabulary& vocab, const json& metadata = json::object()) {
  json tensors = json::array();
  for (const auto& p : params.all())
    tensors.push_back({{"name", p.name}, {"rows", p.value.rows}, {"cols", p.value.cols}});
  const json header = {{"dtype", sizeof(T) == 4 ? "f32" : "f64"},
                       {"config", params.config().to_json()},
                       {"ontology", ontology_to_json(ontology)},
                       {"ontology_hash", ontology.hash()},
                       {"vocab", vocab.to_json()},
                       {"vocab_hash", vocab.hash()},
                       {"metadata", metadata},
                       {"tensors", tensors}};
  const std::string h = header.dump();
  std::string out(kCheckpointMagic);
  const std::uint64_t len = h.size();
  out.append(reinterpret_cast<const char*>(&len), sizeof len);
  out += h;
  for (const auto& p : params.all())
    out.append(reinterpret_cast<const char*>(p.value.data.data()), p.value.size() * sizeof(T));
  return out;
}

template <class T>
void save_checkpoint(const std::string& path, const ModelParameters<T>& params,
                     const Ontology& ontology, const Vocabulary& vocab,
                     const json& metadata = json::object()) {
  write_file(path, serialize_checkpoint(params, ontology, vocab, metadata));
}

struct CheckpointExpectations {
  std::optional<std::string> ontology_hash;
  std::optional<std::string> vocab_hash;
};

/// Loads into precision T whatever precision the file was written in.
/// Refuses files whose ontology or vocabulary hash differs from `expect`.
template <class T>
Checkpoint<T> parse_checkpoint(const std::string& bytes, const CheckpointExpectations& expect = {}) {
  const std::size_t magic_len = std::strlen(kCheckpointMagic);
  if (bytes.size() < magic_len + 8 || bytes.compare(0, magic_len, kCheckpointMagic) != 0)
    throw Error("parse_error", "not a checkpoint file");
  std::uint64_t len = 0;
  std::memcpy(&len, bytes.data() + magic_len, sizeof len);
  const std::size_t body = magic_len + sizeof len;
  if (bytes.size() < body + len) throw Error("parse_error", "truncated checkpoint header");
  const json header = json::parse(bytes.substr(body, len));

  Checkpoint<T> ck;
  ck.ontology = ontology_from_json(header.at("ontology"));
  ck.vocab = Vocabulary::from_json(header.at("vocab"));
  ck.metadata = header.value("metadata", json::object());
  if (ck.ontology.hash() != header.at("ontology_hash").get<std::string>() ||
      ck.vocab.hash() != header.at("vocab_hash").get<std::string>())
    throw Error("corrupt_checkpoint", "embedded ontology/vocabulary hash mismatch");
  if (expect.ontology_hash && *expect.ontology_hash != ck.ontology.hash())
    throw Error("ontology_mismatch", "checkpoint ontology hash " + ck.ontology.hash() +
                                         " != expected " + *expect.ontology_hash);
  if (expect.vocab_hash && *expect.vocab_hash != ck.vocab.hash())
    throw Error("vocab_mismatch", "checkpoint vocabulary hash " + ck.vocab.hash() +
                                      " != expected " + *expect.vocab_hash);

  ck.params = ModelParameters<T>(ModelConfig::from_json(header.at("config")));
  const bool f32 = header.at("dtype").get<std::string>() == "f32";
  const std::size_t width = f32 ? 4 : 8;
  std::size_t off = body + len;
  const auto& tensors = header.at("tensors");
  if (tensors.size() != ck.params.all().size())
    throw Error("parse_error", "tensor table does not match the model config");
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    auto& p = ck.params.at(i);
    if (tensors[i].at("name").get<std::string>() != p.name ||
        tensors[i].at("rows").get<std::size_t>() != p.value.rows ||
        tensors[i].at("cols").get<std::size_t>() != p.value.cols)
      throw Error("parse_error", "tensor " + p.name + " has an unexpected shape");
    if (off + p.value.size() * width > bytes.size())
      throw Error("parse_error", "truncated tensor data");
    for (std::size_t k = 0; k < p.value.size(); ++k, off += width) {
      if (f32) {
        float v;
        std::memcpy(&v, bytes.data() + off, 4);
        p.value.data[k] = static_cast<T>(v);
      } else {
        double v;
        std::memcpy(&v, bytes.data() + off, 8);
        p.value.data[k] = static_cast<T>(v);
      }
    }
  }
  return ck;
}

template <class T>
Checkpoint<T> load_checkpoint(const std::string& path, const CheckpointExpectations& expect = {}) {
  return parse_checkpoint<T>(read_file(path), expect);
}

inline std::string file_hash(const std::string& path) { return hash_hex(read_file(path)); }

}  // namespace acctdst
