#pragma once

// Corpus ingestion and task generators.
//
// Char-level tokens are Unicode scalar values (stored as their UTF-8 bytes);
// word-level tokens are maximal runs of non-whitespace. Ids 0 and 1 are
// reserved for padding and unknown tokens.

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "mcrnn/errors.hpp"
#include "mcrnn/model.hpp"
#include "mcrnn/numerics.hpp"

namespace mcrnn {

// ---------------------------------------------------------------- UTF-8

inline std::vector<std::string> split_utf8(const std::string& text) {
  std::vector<std::string> out;
  out.reserve(text.size());
  std::size_t i = 0;
  while (i < text.size()) {
    const auto b = static_cast<unsigned char>(text[i]);
    std::size_t len = 0;
    std::uint32_t cp = 0;
    if (b < 0x80) {
      len = 1;
      cp = b;
    } else if ((b & 0xE0) == 0xC0) {
      len = 2;
      cp = b & 0x1F;
    } else if ((b & 0xF0) == 0xE0) {
      len = 3;
      cp = b & 0x0F;
    } else if ((b & 0xF8) == 0xF0) {
      len = 4;
      cp = b & 0x07;
    } else {
      throw DataError("invalid UTF-8 lead byte at offset " + std::to_string(i));
    }
    if (i + len > text.size()) throw DataError("truncated UTF-8 sequence at offset " + std::to_string(i));
    for (std::size_t j = 1; j < len; ++j) {
      const auto c = static_cast<unsigned char>(text[i + j]);
      if ((c & 0xC0) != 0x80) throw DataError("invalid UTF-8 continuation at offset " + std::to_string(i + j));
      cp = (cp << 6) | (c & 0x3F);
    }
    static constexpr std::uint32_t min_for_len[5] = {0, 0, 0x80, 0x800, 0x10000};
    if (cp < min_for_len[len] || cp > 0x10FFFF || (cp >= 0xD800 && cp <= 0xDFFF))
      throw DataError("invalid UTF-8 scalar value at offset " + std::to_string(i));
    out.emplace_back(text, i, len);
    i += len;
  }
  return out;
}

inline std::vector<std::string> split_words(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream is(text);
  std::string w;
  while (is >> w) out.push_back(w);
  return out;
}

inline std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open corpus file '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// ---------------------------------------------------------------- Vocab

enum class TokenLevel { chars, words };

inline const char* to_string(TokenLevel l) { return l == TokenLevel::chars ? "char" : "word"; }

inline TokenLevel parse_token_level(const std::string& s) {
  if (s == "char") return TokenLevel::chars;
  if (s == "word") return TokenLevel::words;
  throw ConfigError("unknown token level '" + s + "' (expected char|word)");
}

class Vocab {
 public:
  static constexpr int pad_id = 0;
  static constexpr int unk_id = 1;

  Vocab() : tokens_{"<pad>", "<unk>"} { reindex(); }

  explicit Vocab(TokenLevel level) : Vocab() { level_ = level; }

  // Rebuilds from a token list in id order.
  static Vocab from_tokens(TokenLevel level, std::vector<std::string> tokens) {
    if (tokens.size() < 2) throw DataError("vocabulary must list the two reserved tokens");
    Vocab v(level);
    v.tokens_ = std::move(tokens);
    v.reindex();
    if (v.index_.size() != v.tokens_.size()) throw DataError("vocabulary has duplicate tokens");
    return v;
  }

  TokenLevel level() const noexcept { return level_; }
  std::size_t size() const noexcept { return tokens_.size(); }
  const std::vector<std::string>& tokens() const noexcept { return tokens_; }
  const std::string& token(int id) const { return tokens_.at(static_cast<std::size_t>(id)); }

  int id(const std::string& tok) const {
    const auto it = index_.find(tok);
    return it == index_.end() ? unk_id : it->second;
  }
  bool contains(const std::string& tok) const { return index_.count(tok) > 0; }

  std::vector<std::string> tokenize(const std::string& text) const {
    return level_ == TokenLevel::chars ? split_utf8(text) : split_words(text);
  }

  std::vector<int> encode(const std::string& text) const {
    std::vector<int> ids;
    for (const auto& t : tokenize(text)) ids.push_back(id(t));
    return ids;
  }

  std::string decode(const std::vector<int>& ids) const {
    std::string out;
    for (std::size_t i = 0; i < ids.size(); ++i) {
      if (level_ == TokenLevel::words && i) out += ' ';
      out += token(ids[i]);
    }
    return out;
  }

  friend bool operator==(const Vocab& a, const Vocab& b) {
    return a.level_ == b.level_ && a.tokens_ == b.tokens_;
  }

 private:
  void reindex() {
    index_.clear();
    for (std::size_t i = 0; i < tokens_.size(); ++i) index_.emplace(tokens_[i], static_cast<int>(i));
  }

  TokenLevel level_ = TokenLevel::chars;
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
};

// Frequency descending, ties by byte order (= code point order for UTF-8).
inline Vocab build_vocab(const std::string& text, TokenLevel level, std::size_t min_count = 1) {
  const std::vector<std::string> chars = split_utf8(text);  // validates the encoding at either level
  const std::vector<std::string> toks = level == TokenLevel::chars ? chars : split_words(text);
  if (toks.empty()) throw DataError("cannot build a vocabulary from an empty corpus");
  std::map<std::string, std::size_t> counts;
  for (const auto& t : toks) ++counts[t];
  std::vector<std::pair<std::string, std::size_t>> order(counts.begin(), counts.end());
  std::stable_sort(order.begin(), order.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  std::vector<std::string> tokens{"<pad>", "<unk>"};
  for (const auto& [tok, n] : order)
    if (n >= min_count && tok != "<pad>" && tok != "<unk>") tokens.push_back(tok);
  return Vocab::from_tokens(level, std::move(tokens));
}

// One token per line in id order; backslash and newline are escaped.
inline std::string escape_token(const std::string& t) {
  std::string out;
  for (char c : t) {
    if (c == '\\') out += "\\\\";
    else if (c == '\n') out += "\\n";
    else if (c == '\r') out += "\\r";
    else out += c;
  }
  return out;
}

inline std::string unescape_token(const std::string& t) {
  std::string out;
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (t[i] != '\\') {
      out += t[i];
      continue;
    }
    if (++i >= t.size()) throw DataError("vocabulary line ends in a lone backslash");
    if (t[i] == 'n') out += '\n';
    else if (t[i] == 'r') out += '\r';
    else if (t[i] == '\\') out += '\\';
    else throw DataError(std::string("unknown escape \\") + t[i] + " in vocabulary");
  }
  return out;
}

inline std::string serialize_vocab(const Vocab& v) {
  std::string out;
  for (const auto& t : v.tokens()) out += escape_token(t) + "\n";
  return out;
}

inline Vocab parse_vocab(const std::string& text, TokenLevel level) {
  std::vector<std::string> tokens;
  std::size_t start = 0;
  while (start < text.size()) {
    const std::size_t nl = text.find('\n', start);
    if (nl == std::string::npos) throw DataError("vocabulary file must end with a newline");
    tokens.push_back(unescape_token(text.substr(start, nl - start)));
    start = nl + 1;
  }
  return Vocab::from_tokens(level, std::move(tokens));
}

// ---------------------------------------------------------------- LM stream

// Splits an id sequence into B contiguous lanes; window w gives every lane
// inputs [wT, wT+T) and targets shifted by one. Only full windows are used.
class LmStream {
 public:
  LmStream(std::vector<int> ids, std::size_t batch, std::size_t window)
      : ids_(std::move(ids)), batch_(batch), window_(window) {
    if (batch_ == 0 || window_ == 0) throw ArgumentError("LmStream: batch and window must be >= 1");
    if (ids_.size() < batch_ * (window_ + 1))
      throw DataError("corpus of " + std::to_string(ids_.size()) + " tokens is too small for " +
                      std::to_string(batch_) + " lanes of window " + std::to_string(window_));
    lane_len_ = ids_.size() / batch_;
  }

  std::size_t lanes() const noexcept { return batch_; }
  std::size_t window() const noexcept { return window_; }
  std::size_t lane_length() const noexcept { return lane_len_; }
  std::size_t windows() const noexcept { return (lane_len_ - 1) / window_; }

  Batch batch(std::size_t w) const {
    if (w >= windows()) throw ArgumentError("LmStream: window index out of range");
    Batch b;
    b.lanes.resize(batch_);
    for (std::size_t l = 0; l < batch_; ++l) {
      const std::size_t base = l * lane_len_ + w * window_;
      Lane& lane = b.lanes[l];
      lane.tokens.assign(ids_.begin() + static_cast<long>(base), ids_.begin() + static_cast<long>(base + window_));
      lane.targets.assign(ids_.begin() + static_cast<long>(base + 1),
                          ids_.begin() + static_cast<long>(base + window_ + 1));
    }
    return b;
  }

 private:
  std::vector<int> ids_;
  std::size_t batch_;
  std::size_t window_;
  std::size_t lane_len_ = 0;
};

// ---------------------------------------------------------------- synthetic tasks

enum class SyntheticTask { copy, adding };

struct SyntheticSpec {
  SyntheticTask task = SyntheticTask::copy;
  std::size_t length = 100;   // adding: sequence length
  std::size_t alphabet = 8;   // copy: payload symbols
  std::size_t payload = 5;    // copy: payload length
  std::size_t blank = 30;     // copy: blank span between payload and marker
  std::uint64_t seed = 0;

  void validate() const {
    if (task == SyntheticTask::copy) {
      if (alphabet < 1 || payload < 1) throw ConfigError("copy task needs alphabet >= 1 and payload >= 1");
      if (blank > 0 && payload >= blank) throw ConfigError("copy payload must be shorter than the blank span");
    } else if (length < 2) {
      throw ConfigError("adding task needs length >= 2");
    }
  }

  // copy: id 0 blank, 1..alphabet symbols, alphabet+1 recall marker
  std::size_t copy_vocab() const { return alphabet + 2; }
  std::size_t copy_length() const { return payload + blank + payload; }
  int marker() const { return static_cast<int>(alphabet) + 1; }
};

// Input: payload, `blank` blanks, the marker, payload-1 blanks. The targets
// at the marker and the following payload-1 steps reproduce the payload;
// other steps carry zero loss weight.
inline Lane gen_copy(const SyntheticSpec& spec, std::uint64_t instance) {
  spec.validate();
  Rng rng(mix_seed(spec.seed, instance));
  const std::size_t P = spec.payload, S = spec.blank, L = spec.copy_length();
  Lane lane;
  lane.tokens.assign(L, 0);
  lane.targets.assign(L, 0);
  lane.weights.assign(L, 0.0);
  for (std::size_t i = 0; i < P; ++i) lane.tokens[i] = 1 + static_cast<int>(rng.below(spec.alphabet));
  lane.tokens[P + S] = spec.marker();
  for (std::size_t i = 0; i < P; ++i) {
    lane.targets[P + S + i] = lane.tokens[i];
    lane.weights[P + S + i] = 1.0;
  }
  return lane;
}

// Features per step: [value ~ U(0,1), marker]; one marker in each half of the
// sequence; the target is the sum of the two marked values.
inline Lane gen_adding(const SyntheticSpec& spec, std::uint64_t instance) {
  spec.validate();
  Rng rng(mix_seed(spec.seed, instance));
  const std::size_t T = spec.length, half = T / 2;
  Lane lane;
  lane.features.assign(T, Vector(2));
  for (auto& f : lane.features) f[0] = rng.uniform01();
  const std::size_t a = static_cast<std::size_t>(rng.below(half));
  const std::size_t b = half + static_cast<std::size_t>(rng.below(T - half));
  lane.features[a][1] = 1.0;
  lane.features[b][1] = 1.0;
  lane.target_value = lane.features[a][0] + lane.features[b][0];
  return lane;
}

inline Lane gen_synthetic(const SyntheticSpec& spec, std::uint64_t instance) {
  return spec.task == SyntheticTask::copy ? gen_copy(spec, instance) : gen_adding(spec, instance);
}

// Batch `index` of a stream of fresh instances; instance ids never repeat
// across batches of the same stream.
inline Batch synthetic_batch(const SyntheticSpec& spec, std::size_t batch_size, std::uint64_t index) {
  Batch b;
  for (std::size_t i = 0; i < batch_size; ++i) b.lanes.push_back(gen_synthetic(spec, index * batch_size + i));
  return b;
}

}  // namespace mcrnn
