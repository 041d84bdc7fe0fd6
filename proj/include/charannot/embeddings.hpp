#pragma once

// Character profile texts, embedding backends and cosine similarity.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <filesystem>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <httplib.h>

#include "charannot/core_model.hpp"
#include "charannot/detail/fnv.hpp"
#include "charannot/errors.hpp"
#include "charannot/io.hpp"
#include "charannot/llm_backend.hpp"
#include "charannot/stats.hpp"

namespace charannot {

// Name line, then "trait (count)" pairs by descending count, then every
// action in chunk order.
inline std::string character_profile_text(const AnnotationCorpus& corpus, std::string_view character) {
  const auto* e = corpus.find(character);
  if (e == nullptr) throw InvalidArgument("unknown character '" + std::string(character) + "'");
  AnnotationCorpus single;
  for (const auto& a : e->records) single.add(a);
  std::string out(character);
  out += "\nTraits: ";
  if (!e->records.empty()) {
    const auto stats = character_counts(single);
    bool first = true;
    for (const auto& t : stats.front().trait_counts) {
      if (!first) out += ", ";
      first = false;
      out += t.trait + " (" + std::to_string(t.count) + ")";
    }
  }
  out += "\nActions:\n";
  std::vector<const Annotation*> recs;
  for (const auto& a : e->records) recs.push_back(&a);
  std::stable_sort(recs.begin(), recs.end(), [](const Annotation* x, const Annotation* y) { return x->chunk < y->chunk; });
  for (const auto* a : recs) out += a->action + "\n";
  return out;
}

class EmbeddingBackend {
 public:
  virtual ~EmbeddingBackend() = default;
  virtual std::vector<double> embed(const std::string& text) = 0;
  virtual std::string id() const = 0;
};

// Offline feature-hashing bag of words: each lowercased word adds +-1 to one
// of `dim` buckets, then the vector is scaled to unit length.
class HashingEmbedding : public EmbeddingBackend {
 public:
  explicit HashingEmbedding(std::size_t dim = 64) : dim_(dim) {
    if (dim == 0) throw InvalidArgument("embedding dimension must be positive");
  }

  std::vector<double> embed(const std::string& text) override {
    std::vector<double> v(dim_, 0.0);
    std::string word;
    auto flush = [&] {
      if (word.empty()) return;
      const std::uint64_t h = detail::fnv1a64(word);
      v[h % dim_] += (h >> 63) ? -1.0 : 1.0;
      word.clear();
    };
    for (unsigned char c : text) {
      if (std::isalnum(c) || c >= 0x80) {
        word += static_cast<char>(std::tolower(c));
      } else {
        flush();
      }
    }
    flush();
    double norm = 0.0;
    for (double x : v) norm += x * x;
    // Every word cancelled out (or there were none): fall back to a fixed axis
    // so the result stays unit length.
    if (norm == 0.0) {
      v[0] = 1.0;
      return v;
    }
    norm = std::sqrt(norm);
    for (double& x : v) x /= norm;
    return v;
  }

  std::string id() const override { return "hash-bow-" + std::to_string(dim_); }

 private:
  std::size_t dim_;
};

// OpenAI-compatible /v1/embeddings. Uses LLM_BASE_URL and LLM_API_KEY like
// the chat backend; the model comes from LLM_EMBEDDING_MODEL (default
// text-embedding-3-small).
class HttpEmbeddingBackend : public EmbeddingBackend {
 public:
  struct Options {
    std::string base_url;
    std::string model;
    std::string api_key;
    BackendConfig config;
  };

  explicit HttpEmbeddingBackend(Options opts) : opts_(std::move(opts)), endpoint_(detail::split_base_url(opts_.base_url)) {}

  static HttpEmbeddingBackend from_env(BackendConfig config = {}) {
    Options o;
    o.base_url = detail::env_or("LLM_BASE_URL", "https://api.openai.com");
    o.model = detail::env_or("LLM_EMBEDDING_MODEL", "text-embedding-3-small");
    o.api_key = detail::env_or("LLM_API_KEY", "");
    o.config = config;
    return HttpEmbeddingBackend(std::move(o));
  }

  std::vector<double> embed(const std::string& text) override {
    ordered_json req;
    req["model"] = opts_.model;
    req["input"] = text;
    std::string body = detail::post_json_with_retries(endpoint_, detail::api_path(endpoint_, "embeddings"), opts_.api_key,
                                                      detail::dump_json(req, -1), opts_.config);
    ordered_json doc;
    try {
      doc = detail::parse_json(body, "embedding response");
    } catch (const ParseError& e) {
      throw BackendError(std::string("unparseable embedding response: ") + e.what());
    }
    if (!doc.contains("data") || !doc["data"].is_array() || doc["data"].empty() || !doc["data"][0].contains("embedding") ||
        !doc["data"][0]["embedding"].is_array()) {
      throw BackendError("embedding response has no data[0].embedding");
    }
    std::vector<double> out;
    for (const auto& x : doc["data"][0]["embedding"]) {
      if (!x.is_number()) throw BackendError("embedding response contains a non-numeric component");
      out.push_back(x.get<double>());
    }
    if (out.empty()) throw BackendError("embedding response is empty");
    return out;
  }

  std::string id() const override { return "http-embed:" + opts_.model; }

 private:
  Options opts_;
  detail::Endpoint endpoint_;
};

using CharacterEmbeddings = std::vector<std::pair<std::string, std::vector<double>>>;

// One vector per character, in corpus order.
inline CharacterEmbeddings embed_characters(const AnnotationCorpus& corpus, EmbeddingBackend& backend) {
  CharacterEmbeddings out;
  for (const auto& e : corpus.entries()) {
    std::vector<double> v;
    try {
      v = backend.embed(character_profile_text(corpus, e.character));
    } catch (const BackendError& err) {
      throw BackendError("embedding '" + e.character + "' failed: " + err.what());
    }
    if (!out.empty() && v.size() != out.front().second.size()) {
      throw BackendError("embedding for '" + e.character + "' has dimension " + std::to_string(v.size()) + ", expected " +
                         std::to_string(out.front().second.size()));
    }
    out.emplace_back(e.character, std::move(v));
  }
  return out;
}

inline std::string serialize_embeddings(const CharacterEmbeddings& emb) {
  ordered_json doc = ordered_json::object();
  for (const auto& [name, v] : emb) doc[name] = v;
  return detail::dump_json(doc) + "\n";
}

inline CharacterEmbeddings parse_embeddings(std::string_view bytes) {
  auto doc = detail::parse_json(bytes, "embeddings file");
  if (!doc.is_object()) throw SchemaError("embeddings file: top level must be an object");
  CharacterEmbeddings out;
  for (const auto& [name, v] : doc.items()) {
    if (!v.is_array()) throw SchemaError("embeddings file: '" + name + "' must map to a list of numbers");
    std::vector<double> vec;
    for (const auto& x : v) {
      if (!x.is_number()) throw SchemaError("embeddings file: '" + name + "' must map to a list of numbers");
      vec.push_back(x.get<double>());
    }
    out.emplace_back(name, std::move(vec));
  }
  return out;
}

// Embeds everything first, so a backend failure leaves no file behind.
inline CharacterEmbeddings write_embeddings(const AnnotationCorpus& corpus, EmbeddingBackend& backend,
                                            const std::filesystem::path& path) {
  auto emb = embed_characters(corpus, backend);
  write_file_atomic(path, serialize_embeddings(emb));
  return emb;
}

inline double cosine_similarity(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw InvalidArgument("cosine similarity: dimension mismatch");
  if (a.empty()) throw InvalidArgument("cosine similarity: empty vectors");
  double dot = 0.0;
  double na = 0.0;
  double nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) throw InvalidArgument("cosine similarity: zero vector");
  return std::clamp(dot / (std::sqrt(na) * std::sqrt(nb)), -1.0, 1.0);
}

}  // namespace charannot
