#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace metcc {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;
using IndexList = std::vector<Index>;

enum class Recipe { kPca, kHcp, kMetcc };

std::string_view to_string(Recipe recipe);
Recipe parse_recipe(std::string_view name);

// n x k sample embedding together with the recipe that produced it.
struct Embedding {
  Matrix values;
  Recipe recipe = Recipe::kPca;

  Index rows() const { return values.rows(); }
  Index cols() const { return values.cols(); }
};

}  // namespace metcc
