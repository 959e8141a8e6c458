#pragma once

// Synthetic hierarchical MIL data. Each fine class gets a Gaussian center
// placed as coarse_center + fine_offset; informative patches are noisy
// draws around that center and an optional fraction of patches comes from a
// shared zero-mean unit background cloud carrying no class signal. Every
// slide has its own seed derived from the master seed, so the dataset is a
// pure function of the spec regardless of generation order.

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "hiclass/data.hpp"
#include "hiclass/rng.hpp"

namespace hiclass {

struct SplitCounts {
  std::size_t train = 0, val = 0, test = 0;

  std::size_t for_split(Split s) const {
    switch (s) {
      case Split::train: return train;
      case Split::val: return val;
      case Split::test: return test;
    }
    throw std::logic_error("unreachable split");
  }
};

struct DatasetSpec {
  Taxonomy taxonomy;
  std::size_t feature_dim = 64;
  std::size_t patches_min = 16;
  std::size_t patches_max = 32;
  SplitCounts slides_per_fine_class{10, 5, 5};
  // Optional per-class overrides (by fine class name); a count of 0 drops
  // the class from that split, which is how imbalanced fixtures are built.
  std::map<std::string, SplitCounts> per_class_slides;
  double coarse_center_scale = 10.0;
  double fine_offset_scale = 3.0;
  double patch_noise_scale = 0.25;
  double background_patch_fraction = 0.0;
  std::uint64_t master_seed = 1;
};

namespace detail {
inline constexpr std::uint64_t kCenterStream = 0x11;
inline constexpr std::uint64_t kSlideStream = 0x22;
}  // namespace detail

inline void validate_spec(const DatasetSpec& spec) {
  if (spec.taxonomy.num_fine() == 0)
    throw std::invalid_argument("dataset spec: empty taxonomy");
  if (spec.feature_dim < 1)
    throw std::invalid_argument("dataset spec: feature_dim must be >= 1");
  if (spec.patches_min < 1 || spec.patches_min > spec.patches_max)
    throw std::invalid_argument("dataset spec: need 1 <= patches_min <= patches_max");
  auto check_scale = [](double v, const char* name) {
    if (!(v >= 0.0) || !std::isfinite(v))
      throw std::invalid_argument(std::string("dataset spec: ") + name +
                                  " must be a finite nonnegative real");
  };
  check_scale(spec.coarse_center_scale, "coarse_center_scale");
  check_scale(spec.fine_offset_scale, "fine_offset_scale");
  check_scale(spec.patch_noise_scale, "patch_noise_scale");
  if (!(spec.background_patch_fraction >= 0.0 && spec.background_patch_fraction < 1.0))
    throw std::invalid_argument(
        "dataset spec: background_patch_fraction must be in [0, 1)");
  for (const auto& [name, counts] : spec.per_class_slides)
    spec.taxonomy.fine_index(name);  // throws on unknown class
}

inline SplitCounts counts_for_class(const DatasetSpec& spec, std::size_t fine) {
  const auto it = spec.per_class_slides.find(spec.taxonomy.fine_name(fine));
  return it == spec.per_class_slides.end() ? spec.slides_per_fine_class : it->second;
}

// Generative fine-class centers: coarse centers first (index order), then
// per-class offsets, all from one derived stream.
inline std::vector<Vector> fine_class_centers(const DatasetSpec& spec) {
  Rng rng(seed_combine(spec.master_seed, detail::kCenterStream));
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<Vector> coarse(spec.taxonomy.num_coarse(), Vector(spec.feature_dim));
  for (auto& center : coarse)
    for (double& x : center) x = normal(rng) * spec.coarse_center_scale;
  std::vector<Vector> fine(spec.taxonomy.num_fine(), Vector(spec.feature_dim));
  for (std::size_t f = 0; f < fine.size(); ++f) {
    const Vector& base = coarse[spec.taxonomy.group_of(f)];
    for (std::size_t d = 0; d < spec.feature_dim; ++d)
      fine[f][d] = base[d] + normal(rng) * spec.fine_offset_scale;
  }
  return fine;
}

inline std::string make_slide_id(Split split, std::size_t fine, std::size_t ordinal) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%s_f%02zu_%04zu", to_string(split), fine, ordinal);
  return buf;
}

// One slide, fully determined by (spec, split, fine, ordinal). Features are
// rounded through f32 so bag files round-trip bit-exactly.
inline Bag make_bag(const DatasetSpec& spec, const std::vector<Vector>& centers,
                    Split split, std::size_t fine, std::size_t ordinal) {
  Rng rng(seed_combine(spec.master_seed, detail::kSlideStream,
                       static_cast<std::uint64_t>(split), fine, ordinal));
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_int_distribution<std::size_t> patch_count(spec.patches_min,
                                                         spec.patches_max);
  const std::size_t n_patches = patch_count(rng);
  std::size_t n_background = static_cast<std::size_t>(
      std::llround(spec.background_patch_fraction * static_cast<double>(n_patches)));
  if (n_background >= n_patches) n_background = n_patches - 1;

  Bag bag;
  bag.slide_id = make_slide_id(split, fine, ordinal);
  bag.fine_label = fine;
  bag.coarse_label = spec.taxonomy.group_of(fine);
  bag.features = Matrix(n_patches, spec.feature_dim);
  const Vector& center = centers[fine];
  for (std::size_t k = 0; k < n_patches - n_background; ++k)
    for (std::size_t d = 0; d < spec.feature_dim; ++d)
      bag.features(k, d) = static_cast<double>(static_cast<float>(
          center[d] + normal(rng) * spec.patch_noise_scale));
  for (std::size_t k = n_patches - n_background; k < n_patches; ++k)
    for (std::size_t d = 0; d < spec.feature_dim; ++d)
      bag.features(k, d) = static_cast<double>(static_cast<float>(normal(rng)));
  return bag;
}

// Writes taxonomy.json, manifest.json and bags/<slide_id>.bag under out_dir.
inline std::vector<ManifestEntry> generate_dataset(
    const DatasetSpec& spec, const std::filesystem::path& out_dir) {
  validate_spec(spec);
  std::error_code ec;
  std::filesystem::create_directories(out_dir / "bags", ec);
  if (ec)
    throw std::runtime_error("cannot create output directory '" +
                             (out_dir / "bags").string() + "': " + ec.message());
  const auto centers = fine_class_centers(spec);
  std::vector<ManifestEntry> manifest;
  for (Split split : kAllSplits) {
    for (std::size_t fine = 0; fine < spec.taxonomy.num_fine(); ++fine) {
      const std::size_t count = counts_for_class(spec, fine).for_split(split);
      for (std::size_t ordinal = 0; ordinal < count; ++ordinal) {
        Bag bag = make_bag(spec, centers, split, fine, ordinal);
        ManifestEntry entry;
        entry.slide_id = bag.slide_id;
        entry.split = split;
        entry.coarse = bag.coarse_label;
        entry.fine = bag.fine_label;
        entry.relative_path = "bags/" + bag.slide_id + ".bag";
        write_bag(bag, out_dir / entry.relative_path);
        manifest.push_back(std::move(entry));
      }
    }
  }
  spec.taxonomy.save((out_dir / "taxonomy.json").string());
  write_manifest(manifest, out_dir / "manifest.json");
  return manifest;
}

}  // namespace hiclass
