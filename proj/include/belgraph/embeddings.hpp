// Keyed store of the fixed-dimension vectors that stand in for every piece of
// language-model evidence the model consumes, plus the table file format and
// a deterministic synthetic provider.
#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>
#include <random>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "belgraph/core.hpp"

namespace belgraph {

enum class EmbeddingKind : std::uint8_t {
  BEL_OBS_YES = 0,  // belief i given observation, previous belief assumed active
  BEL_OBS_NO = 1,   // belief i given observation, previous belief assumed inactive
  PAIR = 2,         // relation between beliefs i < j
  ACT_BEL1 = 3,     // action given belief i active
  ACT_BEL0 = 4,     // action given belief i inactive
  INF = 5,          // belief i given observation and realized action
};

inline const char* to_string(EmbeddingKind k) {
  static constexpr std::array<const char*, 6> names{"BEL_OBS_YES", "BEL_OBS_NO", "PAIR",
                                                    "ACT_BEL1",    "ACT_BEL0",   "INF"};
  return names.at(static_cast<std::size_t>(k));
}

inline constexpr std::uint32_t kAbsentObs = 0xFFFFFFFFU;
inline constexpr std::uint16_t kAbsent16 = 0xFFFFU;

struct EmbeddingKey {
  EmbeddingKind kind{};
  std::uint32_t observation_id = kAbsentObs;
  std::uint16_t belief_i = kAbsent16;
  std::uint16_t belief_j = kAbsent16;
  std::uint16_t action_id = kAbsent16;

  static EmbeddingKey bel_obs(bool yes, ObservationId obs, int i) {
    return {yes ? EmbeddingKind::BEL_OBS_YES : EmbeddingKind::BEL_OBS_NO, obs,
            static_cast<std::uint16_t>(i), kAbsent16, kAbsent16};
  }
  static EmbeddingKey pair(int i, int j) {
    if (i > j) std::swap(i, j);
    return {EmbeddingKind::PAIR, kAbsentObs, static_cast<std::uint16_t>(i),
            static_cast<std::uint16_t>(j), kAbsent16};
  }
  static EmbeddingKey act_bel(bool active, int action, int i) {
    return {active ? EmbeddingKind::ACT_BEL1 : EmbeddingKind::ACT_BEL0, kAbsentObs,
            static_cast<std::uint16_t>(i), kAbsent16, static_cast<std::uint16_t>(action)};
  }
  static EmbeddingKey inf(ObservationId obs, int action, int i) {
    return {EmbeddingKind::INF, obs, static_cast<std::uint16_t>(i), kAbsent16,
            static_cast<std::uint16_t>(action)};
  }

  auto tie() const { return std::tie(kind, observation_id, belief_i, belief_j, action_id); }
  friend bool operator<(const EmbeddingKey& a, const EmbeddingKey& b) { return a.tie() < b.tie(); }
  friend bool operator==(const EmbeddingKey& a, const EmbeddingKey& b) {
    return a.tie() == b.tie();
  }

  // Field-presence rules per kind.
  bool well_formed() const {
    switch (kind) {
      case EmbeddingKind::BEL_OBS_YES:
      case EmbeddingKind::BEL_OBS_NO:
        return observation_id != kAbsentObs && belief_i != kAbsent16 && belief_j == kAbsent16 &&
               action_id == kAbsent16;
      case EmbeddingKind::PAIR:
        return observation_id == kAbsentObs && belief_i != kAbsent16 && belief_j != kAbsent16 &&
               belief_i < belief_j && action_id == kAbsent16;
      case EmbeddingKind::ACT_BEL1:
      case EmbeddingKind::ACT_BEL0:
        return observation_id == kAbsentObs && belief_i != kAbsent16 && belief_j == kAbsent16 &&
               action_id != kAbsent16;
      case EmbeddingKind::INF:
        return observation_id != kAbsentObs && belief_i != kAbsent16 && belief_j == kAbsent16 &&
               action_id != kAbsent16;
    }
    return false;
  }

  std::string describe() const {
    std::ostringstream os;
    os << to_string(kind) << '(';
    bool first = true;
    auto field = [&](const char* name, std::uint64_t v, std::uint64_t absent) {
      if (v == absent) return;
      os << (first ? "" : ",") << name << '=' << v;
      first = false;
    };
    field("obs", observation_id, kAbsentObs);
    field("i", belief_i, kAbsent16);
    field("j", belief_j, kAbsent16);
    field("action", action_id, kAbsent16);
    os << ')';
    return os.str();
  }
};

// Observation and action vocabularies. Action ids are 0..labels.size()-1.
struct Vocabulary {
  std::vector<std::pair<ObservationId, std::string>> observations;
  std::vector<std::string> actions;

  std::vector<ObservationId> observation_ids() const {
    std::vector<ObservationId> ids;
    ids.reserve(observations.size());
    for (const auto& [id, label] : observations) ids.push_back(id);
    return ids;
  }

  bool has_observation(ObservationId id) const {
    return std::any_of(observations.begin(), observations.end(),
                       [id](const auto& e) { return e.first == id; });
  }

  static Vocabulary numbered(int num_observations, int num_actions) {
    Vocabulary v;
    for (int o = 0; o < num_observations; ++o)
      v.observations.emplace_back(static_cast<ObservationId>(o), "obs" + std::to_string(o));
    for (int a = 0; a < num_actions; ++a) v.actions.push_back("action" + std::to_string(a));
    return v;
  }
};

// Every key a model with `cfg` needs to run on data drawn from `vocab`.
inline std::vector<EmbeddingKey> required_keys(const ModelConfig& cfg, const Vocabulary& vocab) {
  std::set<int> actions;
  for (const auto& m : cfg.action_masks) actions.insert(m.begin(), m.end());
  std::vector<EmbeddingKey> keys;
  for (ObservationId o : vocab.observation_ids())
    for (int i = 0; i < cfg.K; ++i) {
      keys.push_back(EmbeddingKey::bel_obs(true, o, i));
      keys.push_back(EmbeddingKey::bel_obs(false, o, i));
    }
  if (cfg.ablation != Ablation::no_pairwise)
    for (int i = 0; i < cfg.K; ++i)
      for (int j = i + 1; j < cfg.K; ++j) keys.push_back(EmbeddingKey::pair(i, j));
  for (int a : actions)
    for (int i = 0; i < cfg.K; ++i) {
      keys.push_back(EmbeddingKey::act_bel(true, a, i));
      keys.push_back(EmbeddingKey::act_bel(false, a, i));
    }
  for (ObservationId o : vocab.observation_ids())
    for (int a : actions)
      for (int i = 0; i < cfg.K; ++i) keys.push_back(EmbeddingKey::inf(o, a, i));
  std::sort(keys.begin(), keys.end());
  return keys;
}

class EmbeddingTable {
 public:
  struct Provenance {
    bool synthetic = false;
    std::uint64_t seed = 0;
  };

  EmbeddingTable() = default;
  explicit EmbeddingTable(int dim) : dim_(dim) {
    if (dim <= 0) throw DimensionError("embedding dimension must be positive");
  }

  int dim() const { return dim_; }
  std::size_t size() const { return entries_.size(); }
  const Provenance& provenance() const { return provenance_; }
  void set_provenance(Provenance p) { provenance_ = p; }
  const std::map<EmbeddingKey, std::vector<float>>& entries() const { return entries_; }

  void insert(const EmbeddingKey& key, std::vector<float> values) {
    if (!key.well_formed()) throw FormatError("malformed key " + key.describe());
    if (static_cast<int>(values.size()) != dim_)
      throw DimensionError("vector for " + key.describe() + " has length " +
                           std::to_string(values.size()) + ", table dimension is " +
                           std::to_string(dim_));
    for (float v : values)
      if (!std::isfinite(v)) throw FormatError("non-finite entry in " + key.describe());
    entries_[key] = std::move(values);
  }

  void insert(const EmbeddingKey& key, const Vec& v) {
    insert(key, std::vector<float>(v.data(), v.data() + v.size()));
  }

  bool contains(const EmbeddingKey& key) const { return entries_.count(key) != 0; }

  std::span<const float> raw(const EmbeddingKey& key) const {
    auto it = entries_.find(key);
    if (it == entries_.end()) throw CompletenessError("missing embedding " + key.describe());
    return it->second;
  }

  Vec at(const EmbeddingKey& key) const {
    auto r = raw(key);
    Vec v(r.size());
    for (std::size_t k = 0; k < r.size(); ++k) v[k] = r[k];
    return v;
  }

  std::vector<EmbeddingKey> missing_keys(const ModelConfig& cfg, const Vocabulary& vocab) const {
    std::vector<EmbeddingKey> missing;
    for (const auto& k : required_keys(cfg, vocab))
      if (!contains(k)) missing.push_back(k);
    return missing;
  }

  void validate(const ModelConfig& cfg, const Vocabulary& vocab) const {
    if (cfg.embed_dim != dim_)
      throw DimensionError("table dimension " + std::to_string(dim_) +
                           " does not match embed_dim " + std::to_string(cfg.embed_dim));
    auto missing = missing_keys(cfg, vocab);
    if (missing.empty()) return;
    std::ostringstream os;
    os << missing.size() << " required embedding(s) missing:";
    for (std::size_t k = 0; k < missing.size() && k < 10; ++k) os << ' ' << missing[k].describe();
    throw CompletenessError(os.str());
  }

  friend bool operator==(const EmbeddingTable& a, const EmbeddingTable& b) {
    return a.dim_ == b.dim_ && a.entries_ == b.entries_;
  }

 private:
  int dim_ = 0;
  std::map<EmbeddingKey, std::vector<float>> entries_;
  Provenance provenance_;
};

//--------------------------------------------------------------------------
// Table file: "BGT1", u16 version, u32 dim, u64 count, then sorted records.
namespace detail {

template <typename T>
void put_le(std::string& out, T value) {
  using U = std::make_unsigned_t<T>;
  auto u = static_cast<U>(value);
  for (std::size_t b = 0; b < sizeof(T); ++b) out.push_back(static_cast<char>((u >> (8 * b)) & 0xFF));
}

inline void put_f32(std::string& out, float f) { put_le(out, std::bit_cast<std::uint32_t>(f)); }
inline void put_f64(std::string& out, double f) { put_le(out, std::bit_cast<std::uint64_t>(f)); }

class ByteReader {
 public:
  ByteReader(std::string_view data, std::string what) : data_(data), what_(std::move(what)) {}

  template <typename T>
  T get() {
    if (pos_ + sizeof(T) > data_.size())
      throw FormatError(what_ + ": truncated at byte " + std::to_string(pos_));
    std::make_unsigned_t<T> u = 0;
    for (std::size_t b = 0; b < sizeof(T); ++b)
      u |= static_cast<std::make_unsigned_t<T>>(static_cast<unsigned char>(data_[pos_ + b]))
           << (8 * b);
    pos_ += sizeof(T);
    return static_cast<T>(u);
  }

  float get_f32() { return std::bit_cast<float>(get<std::uint32_t>()); }
  double get_f64() { return std::bit_cast<double>(get<std::uint64_t>()); }

  std::string_view bytes(std::size_t n) {
    if (pos_ + n > data_.size())
      throw FormatError(what_ + ": truncated at byte " + std::to_string(pos_));
    auto s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  std::size_t remaining() const { return data_.size() - pos_; }

 private:
  std::string_view data_;
  std::string what_;
  std::size_t pos_ = 0;
};

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open '" + path + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file(const std::string& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open '" + path + "' for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("failed writing '" + path + "'");
}

}  // namespace detail

inline constexpr std::uint16_t kTableVersion = 1;

inline std::string serialize_table(const EmbeddingTable& table) {
  std::string out = "BGT1";
  detail::put_le<std::uint16_t>(out, kTableVersion);
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(table.dim()));
  detail::put_le<std::uint64_t>(out, table.size());
  for (const auto& [key, values] : table.entries()) {
    detail::put_le<std::uint8_t>(out, static_cast<std::uint8_t>(key.kind));
    detail::put_le<std::uint32_t>(out, key.observation_id);
    detail::put_le<std::uint16_t>(out, key.belief_i);
    detail::put_le<std::uint16_t>(out, key.belief_j);
    detail::put_le<std::uint16_t>(out, key.action_id);
    for (float v : values) detail::put_f32(out, v);
  }
  return out;
}

inline EmbeddingTable parse_table(std::string_view bytes) {
  detail::ByteReader in(bytes, "embedding table");
  if (in.bytes(4) != "BGT1") throw FormatError("embedding table: bad magic");
  const auto version = in.get<std::uint16_t>();
  if (version != kTableVersion)
    throw FormatError("embedding table: unsupported version " + std::to_string(version));
  const auto dim = in.get<std::uint32_t>();
  const auto count = in.get<std::uint64_t>();
  if (dim == 0 || dim > (1U << 20)) throw FormatError("embedding table: implausible dimension");
  const std::uint64_t record_bytes = 11 + 4ULL * dim;
  if (count > in.remaining() / record_bytes + 1)
    throw FormatError("embedding table: truncated (record count exceeds payload)");
  EmbeddingTable table(static_cast<int>(dim));
  bool have_prev = false;
  EmbeddingKey prev;
  for (std::uint64_t r = 0; r < count; ++r) {
    EmbeddingKey key;
    const auto kind = in.get<std::uint8_t>();
    if (kind > 5) throw FormatError("embedding table: record " + std::to_string(r) + " has kind " +
                                    std::to_string(kind));
    key.kind = static_cast<EmbeddingKind>(kind);
    key.observation_id = in.get<std::uint32_t>();
    key.belief_i = in.get<std::uint16_t>();
    key.belief_j = in.get<std::uint16_t>();
    key.action_id = in.get<std::uint16_t>();
    if (!key.well_formed())
      throw FormatError("embedding table: record " + std::to_string(r) + " has malformed key " +
                        key.describe());
    if (have_prev && !(prev < key))
      throw FormatError("embedding table: record " + std::to_string(r) +
                        (prev == key ? " duplicates " : " is out of order after ") +
                        prev.describe());
    std::vector<float> values(dim);
    for (auto& v : values) v = in.get_f32();
    table.insert(key, std::move(values));
    prev = key;
    have_prev = true;
  }
  if (in.remaining() != 0) throw FormatError("embedding table: trailing bytes after last record");
  return table;
}

inline void write_table(const EmbeddingTable& table, const std::string& path) {
  detail::write_file(path, serialize_table(table));
}

inline EmbeddingTable load_table(const std::string& path) {
  return parse_table(detail::read_file(path));
}

inline EmbeddingTable load_table(const std::string& path, const ModelConfig& cfg,
                                 const Vocabulary& vocab) {
  auto table = load_table(path);
  table.validate(cfg, vocab);
  return table;
}

//--------------------------------------------------------------------------
namespace detail {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

inline std::uint64_t hash_combine(std::uint64_t h, std::uint64_t v) {
  return splitmix64(h ^ splitmix64(v));
}

// Standard normal from a 64-bit engine via Box-Muller; portable across
// standard library implementations, unlike std::normal_distribution.
class PortableNormal {
 public:
  double operator()(std::mt19937_64& rng) {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = 0.0;
    while (u1 <= 0.0) u1 = static_cast<double>(rng() >> 11) * 0x1.0p-53;
    const double u2 = static_cast<double>(rng() >> 11) * 0x1.0p-53;
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 2.0 * M_PI * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
  }

 private:
  double spare_ = 0.0;
  bool has_spare_ = false;
};

inline double uniform01(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

}  // namespace detail

inline std::uint64_t key_hash(const EmbeddingKey& key, std::uint64_t seed) {
  std::uint64_t h = detail::splitmix64(seed);
  h = detail::hash_combine(h, static_cast<std::uint64_t>(key.kind));
  h = detail::hash_combine(h, key.observation_id);
  h = detail::hash_combine(h, key.belief_i);
  h = detail::hash_combine(h, key.belief_j);
  h = detail::hash_combine(h, key.action_id);
  return h;
}

// Unit-norm pseudo-random vectors for every key required by (cfg, vocab),
// covering all actions in the vocabulary.
inline EmbeddingTable synth_table(const ModelConfig& cfg, const Vocabulary& vocab,
                                  std::uint64_t seed) {
  ModelConfig all = cfg;
  all.action_masks = ModelConfig::full_masks(1, std::max<int>(cfg.num_actions,
                                                              static_cast<int>(vocab.actions.size())));
  all.ablation = Ablation::full;
  EmbeddingTable table(cfg.embed_dim);
  table.set_provenance({true, seed});
  for (const auto& key : required_keys(all, vocab)) {
    std::mt19937_64 rng(key_hash(key, seed));
    detail::PortableNormal normal;
    Vec v(cfg.embed_dim);
    for (int k = 0; k < cfg.embed_dim; ++k) v[k] = normal(rng);
    v /= v.norm();
    table.insert(key, v);
  }
  return table;
}

// Expected evidence vector under the previous marginal: p*yes + (1-p)*no.
inline Vec mix_history(const Vec& h_yes, const Vec& h_no, double p_prev) {
  if (h_yes.size() != h_no.size())
    throw DimensionError("mix_history: dimensions " + std::to_string(h_yes.size()) + " and " +
                         std::to_string(h_no.size()) + " differ");
  if (!(p_prev >= 0.0 && p_prev <= 1.0)) throw RangeError("mix_history: p_prev outside [0,1]");
  return p_prev * h_yes + (1.0 - p_prev) * h_no;
}

}  // namespace belgraph
