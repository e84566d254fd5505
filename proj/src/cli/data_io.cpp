#include <bit>
#include <charconv>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

#include "sglmm/cli.hpp"
#include "sglmm/error.hpp"

namespace sglmm::cli {
namespace {

std::vector<std::string_view> split_commas(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = line.find(',', start);
    if (pos == std::string_view::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
}

std::string_view chomp(std::string_view s) {
  while (!s.empty() && (s.back() == '\r' || s.back() == '\n')) s.remove_suffix(1);
  return s;
}

bool parse_double(std::string_view s, double& out) {
  if (s.empty()) return false;
  if (s.front() == '+') s.remove_prefix(1);
  const auto res = std::from_chars(s.data(), s.data() + s.size(), out);
  return res.ec == std::errc() && res.ptr == s.data() + s.size();
}

std::string row_label(const std::filesystem::path& path, std::size_t row) {
  return path.string() + ": row " + std::to_string(row);
}

constexpr char kBasisMagic[8] = {'S', 'G', 'L', 'M', 'M', 'B', 'A', 'S'};

template <typename T>
void put(std::ostream& os, T v) {
  static_assert(std::endian::native == std::endian::little, "little-endian host required");
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T take(std::istream& is) {
  T v{};
  if (!is.read(reinterpret_cast<char*>(&v), sizeof(T))) throw DataError("basis file truncated");
  return v;
}

}  // namespace

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << text;
  if (!os) throw std::runtime_error("write failed: " + path.string());
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot read " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

void write_dataset_csv(const std::filesystem::path& path, const SpatialDataset& ds) {
  const std::size_t n = ds.size();
  std::vector<char> is_test(n, 0);
  for (std::size_t i : ds.test_idx) is_test[i] = 1;
  std::string text = "s1,s2";
  for (std::size_t k = 0; k < ds.n_covariates(); ++k) text += ",x" + std::to_string(k + 1);
  text += ",z,split\n";
  for (std::size_t i = 0; i < n; ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    text += format_double(ds.locations[i].x) + "," + format_double(ds.locations[i].y);
    for (Eigen::Index k = 0; k < ds.X.cols(); ++k) text += "," + format_double(ds.X(r, k));
    text += "," + format_double(ds.Z(r)) + (is_test[i] ? ",test\n" : ",train\n");
  }
  write_text(path, text);
}

SpatialDataset read_dataset_csv(const std::filesystem::path& path, Family family) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot read data file " + path.string());
  std::string line;
  if (!std::getline(is, line)) throw DataError(path.string() + ": empty file");
  const auto header = split_commas(chomp(line));
  if (header.size() < 4 || header[0] != "s1" || header[1] != "s2" || header[header.size() - 2] != "z" ||
      header.back() != "split") {
    throw DataError(path.string() + ": header must be s1,s2,x1..xp,z,split");
  }
  const std::size_t p = header.size() - 4;
  for (std::size_t k = 0; k < p; ++k) {
    if (header[2 + k] != "x" + std::to_string(k + 1)) {
      throw DataError(path.string() + ": header column " + std::to_string(3 + k) + " must be x" +
                      std::to_string(k + 1));
    }
  }

  std::vector<Location2D> locs;
  std::vector<double> xs;
  std::vector<double> zs;
  SpatialDataset ds;
  ds.family = family;
  std::size_t row = 1;
  while (std::getline(is, line)) {
    ++row;
    const auto body = chomp(line);
    if (body.empty()) continue;
    const auto cells = split_commas(body);
    if (cells.size() != header.size()) {
      throw DataError(row_label(path, row) + ": expected " + std::to_string(header.size()) + " fields, got " +
                      std::to_string(cells.size()));
    }
    double v[2];
    for (int c = 0; c < 2; ++c) {
      if (!parse_double(cells[static_cast<std::size_t>(c)], v[c]) || !std::isfinite(v[c])) {
        throw DataError(row_label(path, row) + ": bad coordinate '" + std::string(cells[static_cast<std::size_t>(c)]) + "'");
      }
    }
    locs.push_back({v[0], v[1]});
    for (std::size_t k = 0; k < p; ++k) {
      double x = 0.0;
      if (!parse_double(cells[2 + k], x) || !std::isfinite(x)) {
        throw DataError(row_label(path, row) + ": bad covariate x" + std::to_string(k + 1) + " '" +
                        std::string(cells[2 + k]) + "'");
      }
      xs.push_back(x);
    }
    double z = 0.0;
    if (!parse_double(cells[p + 2], z)) {
      throw DataError(row_label(path, row) + ": bad response '" + std::string(cells[p + 2]) + "'");
    }
    if (!in_support(family, z)) {
      throw DataError(row_label(path, row) + ": response " + std::string(cells[p + 2]) +
                      " outside the support of family " + std::string(to_string(family)));
    }
    zs.push_back(z);
    const auto split = cells[p + 3];
    const std::size_t idx = locs.size() - 1;
    if (split == "train") {
      ds.train_idx.push_back(idx);
    } else if (split == "test") {
      ds.test_idx.push_back(idx);
    } else {
      throw DataError(row_label(path, row) + ": split must be train or test, got '" + std::string(split) + "'");
    }
  }
  const auto n = static_cast<Eigen::Index>(locs.size());
  if (n == 0) throw DataError(path.string() + ": no data rows");
  ds.locations = std::move(locs);
  ds.X.resize(n, static_cast<Eigen::Index>(p));
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index k = 0; k < static_cast<Eigen::Index>(p); ++k) {
      ds.X(i, k) = xs[static_cast<std::size_t>(i) * p + static_cast<std::size_t>(k)];
    }
  }
  ds.Z = Eigen::Map<const Eigen::VectorXd>(zs.data(), n);
  ds.validate();
  return ds;
}

void add_intercept(SpatialDataset& ds) {
  Eigen::MatrixXd X(ds.X.rows(), ds.X.cols() + 1);
  X.col(0).setOnes();
  X.rightCols(ds.X.cols()) = ds.X;
  ds.X = std::move(X);
}

void write_samples_csv(const std::filesystem::path& path, const std::vector<std::string>& names,
                       const std::vector<long>& iters, const Eigen::MatrixXd& samples) {
  std::string text = "iter";
  for (const auto& n : names) text += "," + n;
  text += "\n";
  for (Eigen::Index r = 0; r < samples.rows(); ++r) {
    text += std::to_string(iters[static_cast<std::size_t>(r)]);
    for (Eigen::Index c = 0; c < samples.cols(); ++c) text += "," + format_double(samples(r, c));
    text += "\n";
  }
  write_text(path, text);
}

Eigen::MatrixXd read_samples_csv(const std::filesystem::path& path, const std::vector<std::string>& names) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot read samples file " + path.string());
  std::string line;
  std::getline(is, line);
  const auto header = split_commas(chomp(line));
  if (header.size() != names.size() + 1 || header[0] != "iter") {
    throw DataError(path.string() + ": sample columns do not match the model (" + std::to_string(names.size()) +
                    " parameters expected)");
  }
  for (std::size_t k = 0; k < names.size(); ++k) {
    if (header[k + 1] != names[k]) {
      throw DataError(path.string() + ": column " + std::string(header[k + 1]) + " where " + names[k] +
                      " was expected");
    }
  }
  std::vector<double> vals;
  std::size_t row = 1;
  while (std::getline(is, line)) {
    ++row;
    const auto body = chomp(line);
    if (body.empty()) continue;
    const auto cells = split_commas(body);
    if (cells.size() != header.size()) throw DataError(row_label(path, row) + ": wrong field count");
    for (std::size_t c = 1; c < cells.size(); ++c) {
      double v = 0.0;
      if (!parse_double(cells[c], v)) throw DataError(row_label(path, row) + ": bad number");
      vals.push_back(v);
    }
  }
  const auto D = static_cast<Eigen::Index>(names.size());
  const auto S = static_cast<Eigen::Index>(vals.size()) / std::max<Eigen::Index>(D, 1);
  Eigen::MatrixXd out(S, D);
  for (Eigen::Index r = 0; r < S; ++r) {
    for (Eigen::Index c = 0; c < D; ++c) out(r, c) = vals[static_cast<std::size_t>(r * D + c)];
  }
  return out;
}

void write_basis(const std::filesystem::path& path, const BasisSystem& basis) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os.write(kBasisMagic, sizeof(kBasisMagic));
  put<std::uint32_t>(os, 1);
  put<std::uint32_t>(os, basis.prior_cov_mode == PriorCovMode::identity ? 0u : 1u);
  put<std::uint64_t>(os, static_cast<std::uint64_t>(basis.phi.rows()));
  put<std::uint64_t>(os, static_cast<std::uint64_t>(basis.phi.cols()));
  for (Eigen::Index k = 0; k < basis.eigenvalues.size(); ++k) put<double>(os, basis.eigenvalues(k));
  // Column-major, as stored.
  os.write(reinterpret_cast<const char*>(basis.phi.data()),
           static_cast<std::streamsize>(sizeof(double) * static_cast<std::size_t>(basis.phi.size())));
  if (!os) throw std::runtime_error("write failed: " + path.string());
}

BasisSystem read_basis(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot read basis file " + path.string());
  char magic[8];
  if (!is.read(magic, 8) || std::memcmp(magic, kBasisMagic, 8) != 0) {
    throw DataError(path.string() + ": not a basis file");
  }
  if (take<std::uint32_t>(is) != 1) throw DataError(path.string() + ": unsupported basis file version");
  BasisSystem b;
  b.prior_cov_mode = take<std::uint32_t>(is) == 0 ? PriorCovMode::identity : PriorCovMode::eigenvalue_diagonal;
  const auto rows = static_cast<Eigen::Index>(take<std::uint64_t>(is));
  const auto cols = static_cast<Eigen::Index>(take<std::uint64_t>(is));
  b.eigenvalues.resize(cols);
  for (Eigen::Index k = 0; k < cols; ++k) b.eigenvalues(k) = take<double>(is);
  b.phi.resize(rows, cols);
  if (!is.read(reinterpret_cast<char*>(b.phi.data()),
               static_cast<std::streamsize>(sizeof(double) * static_cast<std::size_t>(b.phi.size())))) {
    throw DataError(path.string() + ": basis file truncated");
  }
  return b;
}

}  // namespace sglmm::cli
