// SPDX-License-Identifier: Apache-2.0
#include "geomae/masking.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>

#include "geomae/error.hpp"

namespace geomae {

namespace {

void require_rank3(const char* op, const Shape& shape) {
  if (shape.size() != 3) {
    throw ShapeError(std::string(op) + ": mask shape must be [nodes, steps, features], got " +
                     shape_str(shape));
  }
}

void require_rate(const char* op, double rate) {
  if (!(rate >= 0.0 && rate <= 1.0)) {
    throw ContractError(std::string(op) + ": rate must lie in [0, 1], got " +
                        std::to_string(rate));
  }
}

void require_binary(const char* op, const Tensor& m) {
  for (double v : m.values()) {
    if (v != 0.0 && v != 1.0) {
      throw ContractError(std::string(op) + ": mask entries must be exactly 0 or 1");
    }
  }
}

constexpr char kMaskMagic[4] = {'G', 'M', 'S', 'K'};
constexpr std::uint32_t kMaskVersion = 1;

}  // namespace

const char* pattern_name(MaskPattern p) {
  switch (p) {
    case MaskPattern::kPoint: return "point";
    case MaskPattern::kRow: return "row";
    case MaskPattern::kColumn: return "column";
    case MaskPattern::kBlock: return "block";
    case MaskPattern::kMixed: return "mixed";
  }
  return "?";
}

MaskPattern pattern_from_name(const std::string& name) {
  if (name == "point") return MaskPattern::kPoint;
  if (name == "row") return MaskPattern::kRow;
  if (name == "column") return MaskPattern::kColumn;
  if (name == "block") return MaskPattern::kBlock;
  if (name == "mixed") return MaskPattern::kMixed;
  throw ParseError("unknown mask pattern '" + name + "'");
}

MaskSpec MaskSpec::training_default(std::uint64_t seed) {
  MaskSpec spec;
  spec.pattern = MaskPattern::kMixed;
  spec.rate_range = {0.25, 0.90};
  spec.mix_weights = {1.0, 1.0, 1.0, 0.0};
  spec.seed = seed;
  return spec;
}

void MaskSpec::validate() const {
  if (rate.has_value() == rate_range.has_value()) {
    throw ContractError("MaskSpec: exactly one of rate / rate_range must be set");
  }
  if (rate) require_rate("MaskSpec", *rate);
  if (rate_range) {
    require_rate("MaskSpec", rate_range->first);
    require_rate("MaskSpec", rate_range->second);
    if (rate_range->first > rate_range->second) {
      throw ContractError("MaskSpec: rate_range lower bound exceeds upper bound");
    }
  }
  if (pattern == MaskPattern::kMixed) {
    if (mix_weights.size() != 4) {
      throw ContractError("MaskSpec: mixed pattern needs 4 mix weights");
    }
    double total = 0.0;
    for (double w : mix_weights) {
      if (w < 0.0) throw ContractError("MaskSpec: mix weights must be non-negative");
      total += w;
    }
    if (total <= 0.0) throw ContractError("MaskSpec: mix weights must not all be zero");
  }
  if (block_min_len < 1 || (block_max_len != 0 && block_max_len < block_min_len)) {
    throw ContractError("MaskSpec: invalid block length bounds");
  }
}

double MaskSpec::draw_rate(RandomStream& rng) const {
  if (rate) return *rate;
  return rng.uniform(rate_range->first, rate_range->second);
}

MaskPattern MaskSpec::draw_pattern(RandomStream& rng) const {
  if (pattern != MaskPattern::kMixed) return pattern;
  double total = 0.0;
  for (double w : mix_weights) total += w;
  double u = rng.uniform() * total;
  static const MaskPattern order[4] = {MaskPattern::kPoint, MaskPattern::kRow,
                                       MaskPattern::kColumn, MaskPattern::kBlock};
  for (int i = 0; i < 4; ++i) {
    u -= mix_weights[i];
    if (u < 0.0) return order[i];
  }
  return MaskPattern::kPoint;
}

Tensor gen_point(const Shape& shape, double rate, RandomStream& rng) {
  require_rank3("gen_point", shape);
  require_rate("gen_point", rate);
  std::vector<double> out(static_cast<std::size_t>(shape_numel(shape)), 0.0);
  for (auto& v : out) v = rng.bernoulli(rate) ? 1.0 : 0.0;
  return Tensor(shape, std::move(out));
}

Tensor gen_row(const Shape& shape, double rate, RandomStream& rng) {
  require_rank3("gen_row", shape);
  require_rate("gen_row", rate);
  const std::int64_t nodes = shape[0], steps = shape[1], feats = shape[2];
  std::vector<double> out(static_cast<std::size_t>(shape_numel(shape)), 0.0);
  for (std::int64_t n = 0; n < nodes; ++n) {
    for (std::int64_t t = 0; t < steps; ++t) {
      if (rng.bernoulli(rate)) {
        double* row = out.data() + (n * steps + t) * feats;
        std::fill(row, row + feats, 1.0);
      }
    }
  }
  return Tensor(shape, std::move(out));
}

Tensor gen_column(const Shape& shape, double rate, RandomStream& rng) {
  require_rank3("gen_column", shape);
  require_rate("gen_column", rate);
  const std::int64_t nodes = shape[0], steps = shape[1], feats = shape[2];
  std::vector<double> out(static_cast<std::size_t>(shape_numel(shape)), 0.0);
  for (std::int64_t n = 0; n < nodes; ++n) {
    for (std::int64_t f = 0; f < feats; ++f) {
      if (rng.bernoulli(rate)) {
        for (std::int64_t t = 0; t < steps; ++t) out[(n * steps + t) * feats + f] = 1.0;
      }
    }
  }
  return Tensor(shape, std::move(out));
}

Tensor gen_block(const Shape& shape, double rate, RandomStream& rng, int min_len,
                 int max_len) {
  require_rank3("gen_block", shape);
  require_rate("gen_block", rate);
  const std::int64_t nodes = shape[0], steps = shape[1], feats = shape[2];
  if (max_len == 0) max_len = static_cast<int>(steps);
  if (min_len < 1 || min_len > max_len || max_len > steps) {
    throw ContractError("gen_block: need 1 <= min_len <= max_len <= window length");
  }
  const std::int64_t total = shape_numel(shape);
  std::vector<double> out(static_cast<std::size_t>(total), 0.0);
  std::int64_t masked = 0;
  while (static_cast<double>(masked) < rate * static_cast<double>(total) &&
         masked < total) {
    const std::int64_t node = static_cast<std::int64_t>(rng.integer(nodes));
    const std::int64_t start = static_cast<std::int64_t>(rng.integer(steps));
    const std::int64_t len =
        min_len + static_cast<std::int64_t>(rng.integer(max_len - min_len + 1));
    const std::int64_t end = std::min(start + len, steps);
    for (std::int64_t t = start; t < end; ++t) {
      double* row = out.data() + (node * steps + t) * feats;
      for (std::int64_t f = 0; f < feats; ++f) {
        if (row[f] == 0.0) {
          row[f] = 1.0;
          ++masked;
        }
      }
    }
  }
  return Tensor(shape, std::move(out));
}

Tensor gen_mask(MaskPattern pattern, const Shape& shape, double rate, RandomStream& rng,
                int block_min_len, int block_max_len) {
  switch (pattern) {
    case MaskPattern::kPoint: return gen_point(shape, rate, rng);
    case MaskPattern::kRow: return gen_row(shape, rate, rng);
    case MaskPattern::kColumn: return gen_column(shape, rate, rng);
    case MaskPattern::kBlock: return gen_block(shape, rate, rng, block_min_len, block_max_len);
    case MaskPattern::kMixed:
      throw ContractError("gen_mask: mixed pattern must be resolved via MaskSpec");
  }
  throw ContractError("gen_mask: unreachable");
}

Tensor compose(const Tensor& base, const Tensor& extra) {
  if (base.shape() != extra.shape()) {
    throw ShapeError("compose: mask shapes disagree, " + shape_str(base.shape()) + " vs " +
                     shape_str(extra.shape()));
  }
  require_binary("compose", base);
  require_binary("compose", extra);
  std::vector<double> out(base.values());
  const auto& ev = extra.values();
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (ev[i] == 1.0) out[i] = 1.0;
  }
  return Tensor(base.shape(), std::move(out));
}

double missing_fraction(const Tensor& m) {
  double s = 0.0;
  for (double v : m.values()) s += v;
  return s / static_cast<double>(m.size());
}

AugmentedSet make_augmented(const ReadingWindow& base, int k, const MaskSpec& spec,
                            double sigma, RandomStream& rng) {
  if (k < 1) throw ContractError("make_augmented: k must be >= 1");
  spec.validate();
  AugmentedSet set;
  set.variants.reserve(static_cast<std::size_t>(k));
  for (int i = 0; i < k; ++i) {
    const MaskPattern pattern = spec.draw_pattern(rng);
    const double extra_rate = spec.draw_rate(rng);
    Tensor extra = gen_mask(pattern, base.m.shape(), extra_rate, rng, spec.block_min_len,
                            spec.block_max_len);
    Tensor combined = compose(base.m, extra);
    ReadingWindow masked{base.x, combined};
    Tensor x_hat = impute_random(masked, sigma, rng);
    set.variants.push_back(AugmentedVariant{std::move(x_hat), build_hint(combined), combined});
  }
  return set;
}

void write_mask_file(const std::string& path, const Tensor& m) {
  require_binary("write_mask_file", m);
  if (m.rank() != 3) throw ShapeError("write_mask_file: mask must be rank 3");
  const auto& s = m.shape();
  if (s[1] > 0xffff || s[2] > 0xffff) {
    throw ContractError("write_mask_file: window/feature extents exceed format limits");
  }
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("write_mask_file: cannot open '" + path + "'");
  const std::uint32_t nodes = static_cast<std::uint32_t>(s[0]);
  const std::uint16_t steps = static_cast<std::uint16_t>(s[1]);
  const std::uint16_t feats = static_cast<std::uint16_t>(s[2]);
  os.write(kMaskMagic, 4);
  os.write(reinterpret_cast<const char*>(&kMaskVersion), 4);
  os.write(reinterpret_cast<const char*>(&nodes), 4);
  os.write(reinterpret_cast<const char*>(&steps), 2);
  os.write(reinterpret_cast<const char*>(&feats), 2);
  std::vector<char> bytes(m.values().size());
  for (std::size_t i = 0; i < bytes.size(); ++i) {
    bytes[i] = m.values()[i] == 1.0 ? 1 : 0;
  }
  os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw IoError("write_mask_file: write failed for '" + path + "'");
}

Tensor read_mask_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("read_mask_file: cannot open '" + path + "'");
  char magic[4];
  std::uint32_t version = 0, nodes = 0;
  std::uint16_t steps = 0, feats = 0;
  is.read(magic, 4);
  is.read(reinterpret_cast<char*>(&version), 4);
  is.read(reinterpret_cast<char*>(&nodes), 4);
  is.read(reinterpret_cast<char*>(&steps), 2);
  is.read(reinterpret_cast<char*>(&feats), 2);
  if (!is || std::memcmp(magic, kMaskMagic, 4) != 0) {
    throw ParseError("read_mask_file: '" + path + "' is not a mask file");
  }
  if (version != kMaskVersion) {
    throw ParseError("read_mask_file: unsupported version " + std::to_string(version));
  }
  const std::int64_t total =
      static_cast<std::int64_t>(nodes) * static_cast<std::int64_t>(steps) *
      static_cast<std::int64_t>(feats);
  if (total <= 0) throw ParseError("read_mask_file: empty extents in header");
  std::vector<char> bytes(static_cast<std::size_t>(total));
  is.read(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!is) throw ParseError("read_mask_file: truncated payload in '" + path + "'");
  std::vector<double> out(bytes.size());
  for (std::size_t i = 0; i < bytes.size(); ++i) {
    if (bytes[i] != 0 && bytes[i] != 1) {
      throw ParseError("read_mask_file: non-binary byte at offset " + std::to_string(i));
    }
    out[i] = static_cast<double>(bytes[i]);
  }
  return Tensor({static_cast<std::int64_t>(nodes), static_cast<std::int64_t>(steps),
                 static_cast<std::int64_t>(feats)},
                std::move(out));
}

}  // namespace geomae
