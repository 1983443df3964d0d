#include "ebil/eval.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "ebil/error.hpp"

namespace ebil::eval {

namespace {

using Eigen::Index;

Index idx(std::size_t i) { return static_cast<Index>(i); }

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  std::istringstream in(line);
  while (std::getline(in, field, ',')) fields.push_back(field);
  if (!line.empty() && line.back() == ',') fields.emplace_back();
  return fields;
}

double parse_double(const std::string& text, const std::string& where) {
  double x = 0.0;
  const char* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, x);
  if (ec != std::errc() || ptr != end) throw DataError(where + ": bad number '" + text + "'");
  return x;
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open " + path.string() + " for writing");
  return out;
}

void finish(std::ofstream& out, const std::filesystem::path& path) {
  out.flush();
  if (!out) throw DataError("failed writing " + path.string());
}

}  // namespace

std::string format_exact(double x) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, res.ptr);
}

OccupancyHistogram occupancy_histogram(const envsim::DemoSet& demos, const GridSpec& grid,
                                       double gamma) {
  grid.validate();
  if (!(gamma >= 0.0 && gamma <= 1.0)) throw ConfigError("discount must lie in [0, 1]");
  if (demos.empty()) throw DataError("occupancy of an empty demo set");
  OccupancyHistogram hist{grid,
                          Eigen::MatrixXd::Zero(idx(grid.n_states()), idx(grid.n_actions())),
                          gamma, true};
  for (const auto& traj : demos.trajectories) {
    double w = 1.0;
    for (const auto& tr : traj) {
      hist.weights(idx(grid.state.bin_of(tr.s)), idx(grid.action.bin_of(tr.a))) += w;
      w *= gamma;
    }
  }
  const double total = hist.weights.sum();
  if (!(total > 0.0)) throw DataError("demo set carries no occupancy mass");
  hist.weights /= total;
  return hist;
}

TabularPolicy occupancy_to_policy(const OccupancyHistogram& hist) {
  if ((hist.weights.array() < 0.0).any() || !hist.weights.allFinite()) {
    throw DataError("occupancy weights must be finite and nonnegative");
  }
  if (!(hist.weights.sum() > 0.0)) throw DataError("occupancy histogram has no mass");
  Eigen::MatrixXd p(hist.weights.rows(), hist.weights.cols());
  for (Index s = 0; s < p.rows(); ++s) {
    const double mass = hist.weights.row(s).sum();
    if (mass > 0.0) {
      p.row(s) = hist.weights.row(s) / mass;
    } else {
      p.row(s).setConstant(1.0 / static_cast<double>(p.cols()));
    }
  }
  return TabularPolicy(std::move(p));
}

double kl_divergence(const OccupancyHistogram& p, const OccupancyHistogram& q, double eps) {
  if (!(p.grid == q.grid) || p.weights.rows() != q.weights.rows() ||
      p.weights.cols() != q.weights.cols()) {
    throw DimensionError("KL between histograms on different grids");
  }
  if (!(eps > 0.0)) throw ConfigError("KL smoothing must be positive");
  const Eigen::ArrayXXd ps = p.weights.array() + eps;
  const Eigen::ArrayXXd qs = q.weights.array() + eps;
  const double zp = ps.sum();
  const double zq = qs.sum();
  double kl = 0.0;
  for (Index i = 0; i < ps.size(); ++i) {
    const double pi = ps(i) / zp;
    const double qi = qs(i) / zq;
    if (pi != qi) kl += pi * std::log(pi / qi);
  }
  return kl;
}

double total_variation(const Eigen::RowVectorXd& p, const Eigen::RowVectorXd& q) {
  if (p.size() != q.size()) throw DimensionError("total variation of rows of different length");
  return 0.5 * (p - q).cwiseAbs().sum();
}

RegionMeans region_mean_actions(const envsim::DemoSet& demos) {
  double sums[2] = {0.0, 0.0};
  double counts[2] = {0.0, 0.0};
  for (const auto& traj : demos.trajectories) {
    for (const auto& tr : traj) {
      const int region = tr.s < demos.env.switch_point ? 0 : 1;
      sums[region] += tr.a;
      counts[region] += 1.0;
    }
  }
  const double nan = std::numeric_limits<double>::quiet_NaN();
  return {counts[0] > 0 ? sums[0] / counts[0] : nan, counts[1] > 0 ? sums[1] / counts[1] : nan};
}

ImageFormat image_format_from_string(const std::string& name) {
  if (name == "csv") return ImageFormat::Csv;
  if (name == "pgm") return ImageFormat::Pgm;
  if (name == "svg") return ImageFormat::Svg;
  throw ConfigError("unknown heatmap format '" + name + "' (expected csv, pgm or svg)");
}

std::string extension(ImageFormat format) {
  switch (format) {
    case ImageFormat::Csv: return ".csv";
    case ImageFormat::Pgm: return ".pgm";
    case ImageFormat::Svg: return ".svg";
  }
  return "";
}

void write_heatmap(const Eigen::MatrixXd& values, std::ostream& out, ImageFormat format) {
  if (values.size() == 0) throw DimensionError("empty heatmap");
  if (!values.allFinite()) throw NumericError("heatmap values must be finite");
  if (format == ImageFormat::Csv) {
    for (Index s = 0; s < values.rows(); ++s) {
      for (Index a = 0; a < values.cols(); ++a) {
        out << (a ? "," : "") << format_exact(values(s, a));
      }
      out << '\n';
    }
    return;
  }
  const double lo = values.minCoeff();
  const double range = values.maxCoeff() - lo;
  auto level = [&](Index s, Index a) {
    if (!(range > 0.0)) return 0;
    return static_cast<int>(std::lround(255.0 * (values(s, a) - lo) / range));
  };
  const Index width = values.rows();
  const Index height = values.cols();
  if (format == ImageFormat::Pgm) {
    out << "P2\n" << width << ' ' << height << "\n255\n";
    for (Index y = 0; y < height; ++y) {
      for (Index x = 0; x < width; ++x) out << (x ? " " : "") << level(x, height - 1 - y);
      out << '\n';
    }
    return;
  }
  constexpr int cell = 4;
  out << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
      << "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"" << width * cell
      << "\" height=\"" << height * cell << "\" shape-rendering=\"crispEdges\">\n";
  for (Index y = 0; y < height; ++y) {
    for (Index x = 0; x < width; ++x) {
      const int v = level(x, height - 1 - y);
      out << "<rect x=\"" << x * cell << "\" y=\"" << y * cell << "\" width=\"" << cell
          << "\" height=\"" << cell << "\" fill=\"rgb(" << v << ',' << v << ',' << v
          << ")\"/>\n";
    }
  }
  out << "</svg>\n";
}

void export_heatmap(const Eigen::MatrixXd& values, const std::filesystem::path& path,
                    ImageFormat format) {
  auto out = open_out(path);
  write_heatmap(values, out, format);
  finish(out, path);
}

Eigen::MatrixXd read_csv_matrix(std::istream& in, const std::string& source) {
  std::vector<std::vector<double>> rows;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const std::string where = source + ":" + std::to_string(lineno);
    std::vector<double> row;
    for (const auto& f : split_fields(line)) row.push_back(parse_double(f, where));
    if (!rows.empty() && row.size() != rows.front().size()) {
      throw DataError(where + ": expected " + std::to_string(rows.front().size()) + " columns");
    }
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw DataError(source + ": no rows");
  Eigen::MatrixXd m(idx(rows.size()), idx(rows.front().size()));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    for (std::size_t c = 0; c < rows[r].size(); ++c) m(idx(r), idx(c)) = rows[r][c];
  }
  return m;
}

void write_learning_curve(const LearningCurve& curve, std::ostream& out) {
  out << "iteration";
  for (const auto& name : curve.metrics) out << ',' << name;
  out << '\n';
  for (const auto& rec : curve.records) {
    if (rec.values.size() != curve.metrics.size()) {
      throw DimensionError("curve record at iteration " + std::to_string(rec.iteration) +
                           " has the wrong number of values");
    }
    out << rec.iteration;
    for (const auto& v : rec.values) {
      out << ',';
      if (v) out << format_exact(*v);
    }
    out << '\n';
  }
}

void export_learning_curve(const LearningCurve& curve, const std::filesystem::path& path) {
  auto out = open_out(path);
  write_learning_curve(curve, out);
  finish(out, path);
}

LearningCurve read_learning_curve(std::istream& in, const std::string& source) {
  std::string line;
  if (!std::getline(in, line)) throw DataError(source + ": missing header");
  auto header = split_fields(line);
  if (header.empty() || header.front() != "iteration") {
    throw DataError(source + ":1: header must start with 'iteration'");
  }
  LearningCurve curve;
  curve.metrics.assign(header.begin() + 1, header.end());
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const std::string where = source + ":" + std::to_string(lineno);
    const auto fields = split_fields(line);
    if (fields.size() != header.size()) {
      throw DataError(where + ": expected " + std::to_string(header.size()) + " fields");
    }
    CurveRecord rec;
    const double it = parse_double(fields[0], where);
    rec.iteration = static_cast<long>(it);
    if (static_cast<double>(rec.iteration) != it) throw DataError(where + ": bad iteration");
    for (std::size_t i = 1; i < fields.size(); ++i) {
      if (fields[i].empty()) {
        rec.values.emplace_back();
      } else {
        rec.values.emplace_back(parse_double(fields[i], where));
      }
    }
    curve.records.push_back(std::move(rec));
  }
  return curve;
}

LearningCurve load_learning_curve(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  return read_learning_curve(in, path.string());
}

}  // namespace ebil::eval
