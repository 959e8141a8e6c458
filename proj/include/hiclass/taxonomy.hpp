#pragma once

// Two-level class hierarchy: an ordered list of coarse groups, each owning
// an ordered run of fine classes. Indices are assigned in file order and
// are stable across runs. Immutable after construction.

#include <cstddef>
#include <fstream>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

namespace hiclass {

class Taxonomy {
 public:
  struct CoarseEntry {
    std::string name;
    std::vector<std::string> fine_names;
  };

  Taxonomy() = default;

  // Checks the hierarchy invariants and assigns indices in listing order.
  static Taxonomy validate(const std::vector<CoarseEntry>& entries) {
    if (entries.empty())
      throw std::invalid_argument("taxonomy: no coarse classes");
    Taxonomy t;
    std::set<std::string> coarse_seen, fine_seen;
    for (const auto& entry : entries) {
      if (entry.name.empty())
        throw std::invalid_argument("taxonomy: empty coarse class name");
      if (!coarse_seen.insert(entry.name).second)
        throw std::invalid_argument("taxonomy: duplicate coarse class name '" +
                                    entry.name + "'");
      if (entry.fine_names.empty())
        throw std::invalid_argument("taxonomy: coarse class '" + entry.name +
                                    "' has no fine classes");
      const std::size_t coarse_idx = t.coarse_names_.size();
      t.coarse_names_.push_back(entry.name);
      t.children_.emplace_back();
      for (const auto& fine : entry.fine_names) {
        if (fine.empty())
          throw std::invalid_argument("taxonomy: empty fine class name under '" +
                                      entry.name + "'");
        if (!fine_seen.insert(fine).second)
          throw std::invalid_argument("taxonomy: duplicate fine class name '" +
                                      fine + "'");
        t.children_[coarse_idx].push_back(t.fine_names_.size());
        t.fine_names_.push_back(fine);
        t.fine_to_coarse_.push_back(coarse_idx);
      }
    }
    return t;
  }

  // Expects an ordered JSON array of {"name": ..., "fine": [...]}; anything
  // nested deeper than two levels is rejected.
  static Taxonomy from_json(const nlohmann::json& j) {
    if (!j.is_array())
      throw std::invalid_argument("taxonomy: expected a JSON array of coarse entries");
    std::vector<CoarseEntry> entries;
    for (const auto& item : j) {
      if (!item.is_object())
        throw std::invalid_argument("taxonomy: coarse entry must be an object");
      for (const auto& [key, value] : item.items()) {
        if (key != "name" && key != "fine")
          throw std::invalid_argument("taxonomy: unknown key '" + key + "'");
      }
      if (!item.contains("name") || !item["name"].is_string())
        throw std::invalid_argument("taxonomy: coarse entry needs a string 'name'");
      if (!item.contains("fine") || !item["fine"].is_array())
        throw std::invalid_argument("taxonomy: coarse entry needs a 'fine' array");
      CoarseEntry entry;
      entry.name = item["name"].get<std::string>();
      for (const auto& fine : item["fine"]) {
        if (fine.is_array() || fine.is_object())
          throw std::invalid_argument(
              "taxonomy: hierarchy deeper than two levels under '" + entry.name +
              "' is not supported");
        if (!fine.is_string())
          throw std::invalid_argument("taxonomy: fine class name under '" +
                                      entry.name + "' must be a string");
        entry.fine_names.push_back(fine.get<std::string>());
      }
      entries.push_back(std::move(entry));
    }
    return validate(entries);
  }

  static Taxonomy load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::invalid_argument("taxonomy: cannot open '" + path + "'");
    nlohmann::json j;
    try {
      in >> j;
    } catch (const nlohmann::json::exception& e) {
      throw std::invalid_argument("taxonomy: parse error in '" + path +
                                  "': " + e.what());
    }
    return from_json(j);
  }

  nlohmann::json to_json() const {
    nlohmann::json j = nlohmann::json::array();
    for (std::size_t c = 0; c < coarse_names_.size(); ++c) {
      nlohmann::json fine = nlohmann::json::array();
      for (std::size_t f : children_[c]) fine.push_back(fine_names_[f]);
      j.push_back({{"name", coarse_names_[c]}, {"fine", fine}});
    }
    return j;
  }

  void save(const std::string& path) const {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("taxonomy: cannot write '" + path + "'");
    out << to_json().dump(2) << "\n";
  }

  std::size_t num_coarse() const { return coarse_names_.size(); }
  std::size_t num_fine() const { return fine_names_.size(); }

  const std::string& coarse_name(std::size_t c) const {
    check_coarse(c);
    return coarse_names_[c];
  }
  const std::string& fine_name(std::size_t f) const {
    check_fine(f);
    return fine_names_[f];
  }

  std::size_t group_of(std::size_t fine) const {
    check_fine(fine);
    return fine_to_coarse_[fine];
  }

  // Fine indices sharing the parent coarse class, including `fine` itself;
  // ascending order.
  const std::vector<std::size_t>& siblings_of(std::size_t fine) const {
    check_fine(fine);
    return children_[fine_to_coarse_[fine]];
  }

  // All fine indices outside the parent coarse class; ascending order.
  std::vector<std::size_t> complement_of(std::size_t fine) const {
    check_fine(fine);
    const std::size_t group = fine_to_coarse_[fine];
    std::vector<std::size_t> out;
    out.reserve(num_fine() - children_[group].size());
    for (std::size_t f = 0; f < num_fine(); ++f)
      if (fine_to_coarse_[f] != group) out.push_back(f);
    return out;
  }

  std::size_t fine_index(const std::string& name) const {
    for (std::size_t f = 0; f < fine_names_.size(); ++f)
      if (fine_names_[f] == name) return f;
    throw std::invalid_argument("taxonomy: unknown fine class '" + name + "'");
  }

  bool operator==(const Taxonomy&) const = default;

 private:
  void check_fine(std::size_t f) const {
    if (f >= fine_names_.size())
      throw std::out_of_range("taxonomy: fine index " + std::to_string(f) +
                              " out of range");
  }
  void check_coarse(std::size_t c) const {
    if (c >= coarse_names_.size())
      throw std::out_of_range("taxonomy: coarse index " + std::to_string(c) +
                              " out of range");
  }

  std::vector<std::string> coarse_names_, fine_names_;
  std::vector<std::size_t> fine_to_coarse_;
  std::vector<std::vector<std::size_t>> children_;
};

// The 4-coarse / 14-fine gastric biopsy hierarchy bundled as the default
// fixture (also shipped as data/gastric_taxonomy.json).
inline Taxonomy default_gastric_taxonomy() {
  return Taxonomy::validate({
      {"Benign",
       {"Fundic gland polyp", "Hyperplastic polyp", "Inflammatory fibroid polyp",
        "Xanthoma"}},
      {"Cancer",
       {"Malignant lymphoma", "Neuroendocrine tumor", "Tubular adenocarcinoma",
        "Poorly cohesive carcinoma"}},
      {"Dysplasia",
       {"Tubular adenoma (low-grade)", "Tubular adenoma (high-grade)"}},
      {"Gastritis",
       {"Chronic active gastritis", "Chronic gastritis", "Erosion", "Ulceration"}},
  });
}

// Synthetic taxonomy with `num_fine` classes spread as evenly as possible
// over `num_coarse` groups; handy for small gradient-check configs.
inline Taxonomy make_uniform_taxonomy(std::size_t num_coarse, std::size_t num_fine) {
  if (num_coarse == 0 || num_fine < num_coarse)
    throw std::invalid_argument("make_uniform_taxonomy: need num_fine >= num_coarse >= 1");
  std::vector<Taxonomy::CoarseEntry> entries(num_coarse);
  const std::size_t base = num_fine / num_coarse;
  const std::size_t extra = num_fine % num_coarse;
  std::size_t f = 0;
  for (std::size_t c = 0; c < num_coarse; ++c) {
    entries[c].name = "coarse_" + std::to_string(c);
    const std::size_t count = base + (c < extra ? 1 : 0);
    for (std::size_t k = 0; k < count; ++k, ++f)
      entries[c].fine_names.push_back("fine_" + std::to_string(f));
  }
  return Taxonomy::validate(entries);
}

}  // namespace hiclass
