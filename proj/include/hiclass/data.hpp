#pragma once

// Bag container and the on-disk dataset layout: .bag files (fixed 32-byte
// header + little-endian f32 payload), a JSON manifest, and split loading.

#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "hiclass/io.hpp"
#include "hiclass/numerics.hpp"
#include "hiclass/taxonomy.hpp"

namespace hiclass {

struct Bag {
  std::string slide_id;
  Matrix features;  // n_patches x feature_dim
  std::size_t coarse_label = 0;
  std::size_t fine_label = 0;
};

inline constexpr std::array<char, 4> kBagMagic = {'H', 'M', 'I', 'L'};
inline constexpr std::uint32_t kBagVersion = 1;
// Header layout (32 bytes): magic, version, n_patches, feature_dim,
// coarse_label, fine_label, 8 reserved bytes.
inline constexpr std::size_t kBagReservedBytes = 8;

inline void validate_bag(const Bag& bag, const Taxonomy* taxonomy = nullptr) {
  if (bag.features.rows() < 1)
    throw std::invalid_argument("bag '" + bag.slide_id + "': needs at least one patch");
  if (bag.features.cols() < 1)
    throw std::invalid_argument("bag '" + bag.slide_id + "': feature dim must be >= 1");
  if (!all_finite(bag.features))
    throw std::invalid_argument("bag '" + bag.slide_id + "': non-finite feature value");
  if (taxonomy) {
    if (bag.fine_label >= taxonomy->num_fine() ||
        bag.coarse_label >= taxonomy->num_coarse())
      throw std::invalid_argument("bag '" + bag.slide_id + "': label out of range");
    if (taxonomy->group_of(bag.fine_label) != bag.coarse_label)
      throw std::invalid_argument("bag '" + bag.slide_id +
                                  "': coarse/fine label pair inconsistent");
  }
}

inline void write_bag(const Bag& bag, const std::filesystem::path& path) {
  validate_bag(bag);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write bag file '" + path.string() + "'");
  write_raw(out, kBagMagic.data(), kBagMagic.size());
  write_u32(out, kBagVersion);
  write_u32(out, static_cast<std::uint32_t>(bag.features.rows()));
  write_u32(out, static_cast<std::uint32_t>(bag.features.cols()));
  write_u32(out, static_cast<std::uint32_t>(bag.coarse_label));
  write_u32(out, static_cast<std::uint32_t>(bag.fine_label));
  const std::array<char, kBagReservedBytes> reserved{};
  write_raw(out, reserved.data(), reserved.size());
  for (double x : bag.features.data()) write_f32(out, static_cast<float>(x));
}

inline Bag read_bag(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open bag file '" + path.string() + "'");
  const std::string where = "bag '" + path.string() + "'";
  std::array<char, 4> magic{};
  read_raw(in, magic.data(), magic.size(), where + " magic");
  if (magic != kBagMagic) throw std::runtime_error(where + ": bad magic");
  const std::uint32_t version = read_u32(in, where + " version");
  if (version != kBagVersion)
    throw std::runtime_error(where + ": unsupported version " + std::to_string(version));
  const std::uint32_t n_patches = read_u32(in, where + " patch count");
  const std::uint32_t dim = read_u32(in, where + " feature dim");
  if (n_patches < 1) throw std::runtime_error(where + ": header says zero patches");
  if (dim < 1) throw std::runtime_error(where + ": header says zero feature dim");
  if (static_cast<std::uint64_t>(n_patches) * dim > (1ull << 30))
    throw std::runtime_error(where + ": unreasonable dimensions in header");
  Bag bag;
  bag.slide_id = path.stem().string();
  bag.coarse_label = read_u32(in, where + " coarse label");
  bag.fine_label = read_u32(in, where + " fine label");
  std::array<char, kBagReservedBytes> reserved{};
  read_raw(in, reserved.data(), reserved.size(), where + " reserved bytes");
  bag.features = Matrix(n_patches, dim);
  std::vector<float> payload(static_cast<std::size_t>(n_patches) * dim);
  read_raw(in, payload.data(), payload.size() * sizeof(float), where + " payload");
  expect_eof(in, where);
  for (std::size_t i = 0; i < payload.size(); ++i) {
    if (!std::isfinite(payload[i]))
      throw std::runtime_error(where + ": non-finite feature value");
    bag.features.data()[i] = static_cast<double>(payload[i]);
  }
  return bag;
}

enum class Split { train, val, test };

inline const char* to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  throw std::logic_error("unreachable split");
}

inline Split split_from_string(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  if (s == "test") return Split::test;
  throw std::invalid_argument("unknown split '" + s + "'");
}

inline constexpr std::array<Split, 3> kAllSplits = {Split::train, Split::val,
                                                    Split::test};

struct ManifestEntry {
  std::string slide_id;
  Split split = Split::train;
  std::size_t coarse = 0;
  std::size_t fine = 0;
  std::string relative_path;
};

inline void write_manifest(const std::vector<ManifestEntry>& entries,
                           const std::filesystem::path& path) {
  nlohmann::json j = nlohmann::json::array();
  for (const auto& e : entries) {
    j.push_back({{"slide_id", e.slide_id},
                 {"split", to_string(e.split)},
                 {"coarse", e.coarse},
                 {"fine", e.fine},
                 {"relative_path", e.relative_path}});
  }
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write manifest '" + path.string() + "'");
  out << j.dump(2) << "\n";
}

inline std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open manifest '" + path.string() + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("manifest parse error in '" + path.string() +
                             "': " + e.what());
  }
  if (!j.is_array()) throw std::runtime_error("manifest must be a JSON array");
  std::vector<ManifestEntry> entries;
  for (const auto& item : j) {
    if (!item.is_object()) throw std::runtime_error("manifest entry must be an object");
    for (const auto& [key, value] : item.items()) {
      if (key != "slide_id" && key != "split" && key != "coarse" && key != "fine" &&
          key != "relative_path")
        throw std::runtime_error("manifest: unknown key '" + key + "'");
    }
    ManifestEntry e;
    e.slide_id = item.at("slide_id").get<std::string>();
    e.split = split_from_string(item.at("split").get<std::string>());
    e.coarse = item.at("coarse").get<std::size_t>();
    e.fine = item.at("fine").get<std::size_t>();
    e.relative_path = item.at("relative_path").get<std::string>();
    entries.push_back(std::move(e));
  }
  return entries;
}

struct Dataset {
  Taxonomy taxonomy;
  std::vector<Bag> train, val, test;

  const std::vector<Bag>& split(Split s) const {
    switch (s) {
      case Split::train: return train;
      case Split::val: return val;
      case Split::test: return test;
    }
    throw std::logic_error("unreachable split");
  }
};

// Reads taxonomy.json + manifest.json + all referenced bags from a dataset
// directory, cross-checking bag headers against the manifest.
inline Dataset load_dataset(const std::filesystem::path& dir) {
  Dataset ds;
  ds.taxonomy = Taxonomy::load((dir / "taxonomy.json").string());
  const auto entries = read_manifest(dir / "manifest.json");
  for (const auto& e : entries) {
    Bag bag = read_bag(dir / e.relative_path);
    if (bag.coarse_label != e.coarse || bag.fine_label != e.fine)
      throw std::runtime_error("slide '" + e.slide_id +
                               "': bag header labels disagree with manifest");
    bag.slide_id = e.slide_id;
    validate_bag(bag, &ds.taxonomy);
    switch (e.split) {
      case Split::train: ds.train.push_back(std::move(bag)); break;
      case Split::val: ds.val.push_back(std::move(bag)); break;
      case Split::test: ds.test.push_back(std::move(bag)); break;
    }
  }
  return ds;
}

}  // namespace hiclass
