#include "pcens/score_matrix.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include "pcens/pointcloud.hpp"

namespace pcens {

void ScoreMatrix::validate() const {
  if (labels.size() != scores.rows() || sample_ids.size() != scores.rows())
    throw std::invalid_argument("ScoreMatrix '" + source_tag + "': labels/ids do not match row count");
  if (scores.cols() == 0) throw std::invalid_argument("ScoreMatrix '" + source_tag + "': zero classes");
  for (int l : labels)
    if (l < 0 || static_cast<std::size_t>(l) >= scores.cols())
      throw std::invalid_argument("ScoreMatrix '" + source_tag + "': label out of range");
  if (!scores.all_finite()) throw std::invalid_argument("ScoreMatrix '" + source_tag + "': non-finite score");
}

void write_scores_csv(const ScoreMatrix& m, std::ostream& out) {
  m.validate();
  out << "sample_id,label";
  for (std::size_t c = 0; c < m.n_classes(); ++c) out << ",s_" << c;
  out << '\n';
  for (std::size_t r = 0; r < m.n_samples(); ++r) {
    out << m.sample_ids[r] << ',' << m.labels[r];
    for (double v : m.scores.row(r)) out << ',' << format_real(v);
    out << '\n';
  }
}

void write_scores_csv(const ScoreMatrix& m, const std::filesystem::path& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
  write_scores_csv(m, f);
}

namespace {

std::vector<std::string> split_commas(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string tok;
  while (std::getline(ss, tok, ',')) out.push_back(tok);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

}  // namespace

ScoreMatrix read_scores_csv(std::istream& in, std::string source_tag) {
  std::string line;
  std::size_t line_no = 0;
  // skip the provenance comment block
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.front() != '#') break;
  }
  if (line.empty() || line.front() == '#') throw std::runtime_error("scores csv: missing header");
  if (line.back() == '\r') line.pop_back();
  const auto head = split_commas(line);
  if (head.size() < 3 || head[0] != "sample_id" || head[1] != "label")
    throw std::runtime_error("scores csv: header must start with sample_id,label,s_0");
  const std::size_t C = head.size() - 2;
  for (std::size_t c = 0; c < C; ++c)
    if (head[c + 2] != "s_" + std::to_string(c)) throw std::runtime_error("scores csv: bad column " + head[c + 2]);

  ScoreMatrix m;
  m.source_tag = std::move(source_tag);
  std::vector<double> data;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto tok = split_commas(line);
    if (tok.size() != C + 2)
      throw std::runtime_error("scores csv line " + std::to_string(line_no) + ": expected " +
                               std::to_string(C + 2) + " fields");
    std::size_t id = 0;
    int label = 0;
    auto ok_id = std::from_chars(tok[0].data(), tok[0].data() + tok[0].size(), id);
    auto ok_label = std::from_chars(tok[1].data(), tok[1].data() + tok[1].size(), label);
    if (ok_id.ec != std::errc() || ok_label.ec != std::errc())
      throw std::runtime_error("scores csv line " + std::to_string(line_no) + ": bad id/label");
    m.sample_ids.push_back(id);
    m.labels.push_back(label);
    for (std::size_t c = 0; c < C; ++c) {
      char* end = nullptr;
      const double v = std::strtod(tok[c + 2].c_str(), &end);
      if (end != tok[c + 2].c_str() + tok[c + 2].size() || tok[c + 2].empty())
        throw std::runtime_error("scores csv line " + std::to_string(line_no) + ": bad score");
      data.push_back(v);
    }
  }
  m.scores = Mat(m.labels.size(), C, std::move(data));
  m.validate();
  return m;
}

ScoreMatrix read_scores_csv(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open '" + path.string() + "'");
  return read_scores_csv(f, path.stem().string());
}

ScoreMatrix concat_rows(const ScoreMatrix& a, const ScoreMatrix& b) {
  if (a.n_classes() != b.n_classes()) throw std::invalid_argument("concat_rows: class count mismatch");
  ScoreMatrix out = a;
  std::vector<double> data = a.scores.data();
  data.insert(data.end(), b.scores.data().begin(), b.scores.data().end());
  out.scores = Mat(a.n_samples() + b.n_samples(), a.n_classes(), std::move(data));
  out.labels.insert(out.labels.end(), b.labels.begin(), b.labels.end());
  out.sample_ids.insert(out.sample_ids.end(), b.sample_ids.begin(), b.sample_ids.end());
  return out;
}

}  // namespace pcens
