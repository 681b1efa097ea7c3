#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "pcens/numerics.hpp"

namespace pcens {

/// Raw class activations of one model instance over an evaluation set.
/// Row r belongs to dataset sample sample_ids[r] with true class labels[r].
struct ScoreMatrix {
  Mat scores;
  std::vector<int> labels;
  std::vector<std::size_t> sample_ids;
  std::string source_tag;

  std::size_t n_samples() const { return scores.rows(); }
  std::size_t n_classes() const { return scores.cols(); }
  /// Throws if shapes, labels or finiteness are inconsistent.
  void validate() const;
};

/// CSV with header `sample_id,label,s_0,...,s_{C-1}` and 17-digit decimals.
void write_scores_csv(const ScoreMatrix& m, std::ostream& out);
void write_scores_csv(const ScoreMatrix& m, const std::filesystem::path& path);
ScoreMatrix read_scores_csv(std::istream& in, std::string source_tag = {});
ScoreMatrix read_scores_csv(const std::filesystem::path& path);

/// Stacks rows of b under a; classes must agree.
ScoreMatrix concat_rows(const ScoreMatrix& a, const ScoreMatrix& b);

}  // namespace pcens
