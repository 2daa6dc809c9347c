#include "forcelens/materials.h"

#include <algorithm>

#include "forcelens/errors.h"
#include "forcelens/json_util.h"
#include "materials_json.h"

namespace forcelens {
namespace {

std::vector<CatalogEntry> parse_catalog() {
  auto doc = Json::parse(kBundledMaterialsJson);
  if (doc.at("version").get<std::string>() != kMaterialCatalogVersion) {
    throw VersionError("bundled material catalog has unexpected version");
  }
  std::vector<CatalogEntry> entries;
  for (const auto& item : doc.at("materials")) {
    CatalogEntry entry;
    entry.params = material_from_json(item);
    entry.source = item.at("source").get<std::string>();
    validate(entry.params);
    entries.push_back(std::move(entry));
  }
  return entries;
}

std::size_t edit_distance(std::string_view a, std::string_view b) {
  std::vector<std::size_t> row(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) row[j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    std::size_t diag = row[0];
    row[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      std::size_t up = row[j];
      row[j] = std::min({row[j] + 1, row[j - 1] + 1,
                         diag + (a[i - 1] == b[j - 1] ? 0 : 1)});
      diag = up;
    }
  }
  return row[b.size()];
}

}  // namespace

std::span<const CatalogEntry> material_catalog() {
  static const std::vector<CatalogEntry> catalog = parse_catalog();
  return catalog;
}

MaterialParams material_lookup(std::string_view name) {
  for (const auto& entry : material_catalog()) {
    if (entry.params.name == name) return entry.params;
  }
  std::string msg = "unknown material '" + std::string(name) + "'; nearest:";
  for (const auto& n : nearest_material_names(name, 3)) msg += " " + n;
  throw UnknownMaterialError(msg);
}

std::vector<std::string> nearest_material_names(std::string_view name,
                                                std::size_t count) {
  auto catalog = material_catalog();
  std::vector<std::pair<std::size_t, std::size_t>> ranked;
  for (std::size_t i = 0; i < catalog.size(); ++i) {
    ranked.emplace_back(edit_distance(name, catalog[i].params.name), i);
  }
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) { return a.first < b.first; });
  std::vector<std::string> names;
  for (std::size_t i = 0; i < std::min(count, ranked.size()); ++i) {
    names.push_back(catalog[ranked[i].second].params.name);
  }
  return names;
}

}  // namespace forcelens
