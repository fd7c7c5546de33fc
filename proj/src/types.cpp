#include "metcc/types.hpp"

#include <string>

#include "metcc/error.hpp"

namespace metcc {

std::string_view to_string(Recipe recipe) {
  switch (recipe) {
    case Recipe::kPca: return "pca";
    case Recipe::kHcp: return "hcp";
    case Recipe::kMetcc: return "metcc";
  }
  return "unknown";
}

Recipe parse_recipe(std::string_view name) {
  if (name == "pca") return Recipe::kPca;
  if (name == "hcp") return Recipe::kHcp;
  if (name == "metcc") return Recipe::kMetcc;
  throw Error(Errc::kInvalidArgument, "unknown recipe '" + std::string(name) + "'");
}

}  // namespace metcc
