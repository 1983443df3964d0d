#pragma once

// Occupancy measures over the grid, the occupancy-to-policy map, KL between
// occupancies, and file exports for heatmaps and learning curves.

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "ebil/envsim.hpp"
#include "ebil/tabular.hpp"

namespace ebil::eval {

struct OccupancyHistogram {
  GridSpec grid;
  /// n_states x n_actions, nonnegative.
  Eigen::MatrixXd weights;
  double gamma = 1.0;
  bool normalized = true;

  double total_mass() const { return weights.sum(); }
};

/// Each transition at step t adds gamma^t to its (state, action) bin; the
/// result is normalized to total mass 1.
OccupancyHistogram occupancy_histogram(const envsim::DemoSet& demos, const GridSpec& grid,
                                       double gamma = 1.0);

/// Row-normalizes the histogram. States without mass get the uniform row.
TabularPolicy occupancy_to_policy(const OccupancyHistogram& hist);

/// sum p log(p / q) after adding eps to every bin of both and renormalizing.
double kl_divergence(const OccupancyHistogram& p, const OccupancyHistogram& q, double eps = 1e-6);

/// Half the L1 distance between two probability rows.
double total_variation(const Eigen::RowVectorXd& p, const Eigen::RowVectorXd& q);

/// Mean action of the transitions below and at-or-above the switch point.
/// NaN for a region without transitions.
struct RegionMeans {
  double low = 0.0;
  double high = 0.0;
};
RegionMeans region_mean_actions(const envsim::DemoSet& demos);

enum class ImageFormat { Csv, Pgm, Svg };

ImageFormat image_format_from_string(const std::string& name);
std::string extension(ImageFormat format);

/// Writes a states x actions grid. CSV holds the matrix itself, one state
/// per line with round-trip exact numbers. PGM and SVG put states on the
/// horizontal axis and actions on the vertical axis (largest at the top),
/// mapping [min, max] linearly onto black..white; a constant grid is black.
void export_heatmap(const Eigen::MatrixXd& values, const std::filesystem::path& path,
                    ImageFormat format);
void write_heatmap(const Eigen::MatrixXd& values, std::ostream& out, ImageFormat format);

/// Reads a CSV grid written by export_heatmap.
Eigen::MatrixXd read_csv_matrix(std::istream& in, const std::string& source = "<stream>");

// Learning curves: an iteration column followed by named metrics. Missing
// values are empty fields.

struct CurveRecord {
  long iteration = 0;
  std::vector<std::optional<double>> values;

  bool operator==(const CurveRecord&) const = default;
};

struct LearningCurve {
  std::vector<std::string> metrics;
  std::vector<CurveRecord> records;

  bool operator==(const LearningCurve&) const = default;
};

void write_learning_curve(const LearningCurve& curve, std::ostream& out);
void export_learning_curve(const LearningCurve& curve, const std::filesystem::path& path);
LearningCurve read_learning_curve(std::istream& in, const std::string& source = "<stream>");
LearningCurve load_learning_curve(const std::filesystem::path& path);

/// Shortest decimal text that parses back to exactly x.
std::string format_exact(double x);

}  // namespace ebil::eval
