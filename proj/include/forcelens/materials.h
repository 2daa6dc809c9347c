#pragma once

#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "forcelens/scene.h"

namespace forcelens {

inline constexpr char kMaterialCatalogVersion[] = "forcelens.materials/1";

struct CatalogEntry {
  MaterialParams params;
  std::string source;
};

// The bundled, read-only material catalog. Parsed once on first use.
std::span<const CatalogEntry> material_catalog();

// Returns a copy of the named catalog entry. Unknown names throw
// UnknownMaterialError listing the closest catalog names.
MaterialParams material_lookup(std::string_view name);

// Catalog names ordered by edit distance to `name` (ties by catalog order).
std::vector<std::string> nearest_material_names(std::string_view name,
                                                std::size_t count);

}  // namespace forcelens
