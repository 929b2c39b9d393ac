#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "critical/risk_metrics.hpp"
#include "critical/scenario.hpp"

namespace critical::highd {

/// One row of a highD tracks file (only the consumed columns).
struct TrackRow {
  int frame = 1;
  int vehicle_id = 0;
  double x = 0.0;       // left edge of the bounding box [m]
  double y = 0.0;       // upper edge of the bounding box [m]
  double width = 0.0;   // extent along x, i.e. vehicle length [m]
  double height = 0.0;  // extent along y, i.e. vehicle width [m]
  double x_velocity = 0.0;
  double y_velocity = 0.0;
  double x_acceleration = 0.0;
  double y_acceleration = 0.0;
  double dhw = 0.0;
  double thw = 0.0;  // non-positive when there is no leader
  double ttc = 0.0;  // non-positive when undefined
  int preceding_id = 0;  // 0 = none
  int lane_id = 0;

  bool operator==(const TrackRow&) const = default;
};

struct VehicleTrack {
  int id = 0;
  VehicleKind kind = VehicleKind::car;
  int num_lane_changes = 0;
  int driving_direction = 2;  // highD: 1 = leftwards, 2 = rightwards
  std::vector<TrackRow> rows;  // sorted by frame

  bool operator==(const VehicleTrack&) const = default;
};

struct RecordingMeta {
  int id = 0;
  double frame_rate = 25.0;
  int num_vehicles = 0;

  bool operator==(const RecordingMeta&) const = default;
};

struct Recording {
  std::string name;
  RecordingMeta meta;
  std::vector<VehicleTrack> tracks;  // sorted by id

  bool operator==(const Recording&) const = default;
};

class ParseError : public std::runtime_error {
 public:
  ParseError(std::string file, std::string column, std::size_t row, const std::string& what)
      : std::runtime_error(what), file_(std::move(file)), column_(std::move(column)), row_(row) {}
  const std::string& file() const { return file_; }
  const std::string& column() const { return column_; }
  /// 1-based data row (header excluded), 0 for header-level errors.
  std::size_t row() const { return row_; }

 private:
  std::string file_;
  std::string column_;
  std::size_t row_;
};

/// Groups rows by vehicle and sorts them by frame; the vehicle kind and
/// lane-change count come from the tracks meta table.
std::vector<VehicleTrack> parse_tracks(std::istream& tracks, std::istream& tracks_meta,
                                       const std::string& tracks_name = "tracks",
                                       const std::string& meta_name = "tracksMeta");
std::vector<VehicleTrack> parse_tracks(const std::filesystem::path& tracks_path,
                                       const std::filesystem::path& tracks_meta_path);
RecordingMeta parse_recording_meta(std::istream& in, const std::string& name = "recordingMeta");

/// Accepts a prefix ("data/01") or a tracks file path ("data/01_tracks.csv").
struct RecordingFiles {
  std::filesystem::path tracks;
  std::filesystem::path tracks_meta;
  std::filesystem::path recording_meta;
  std::string name;
};
RecordingFiles recording_files(const std::filesystem::path& recording);
Recording load_recording(const std::filesystem::path& recording);

/// Writes the three CSV files in highD layout. Numbers use the shortest
/// representation that reads back to the same double.
void write_recording(const std::filesystem::path& prefix, const Recording& recording);
std::string tracks_csv(const Recording& recording);
std::string tracks_meta_csv(const Recording& recording);
std::string recording_meta_csv(const Recording& recording);

struct DriverFeatures {
  int vehicle_id = 0;
  double mean_speed = 0.0;
  double speed_std = 0.0;
  double mean_abs_accel = 0.0;
  double max_abs_accel = 0.0;
  double min_thw = kInfinity;  // infinite when never following anyone
  int lane_change_count = 0;
  VehicleKind kind = VehicleKind::car;
};

struct FeatureTable {
  std::vector<DriverFeatures> rows;
  int skipped = 0;  // tracks shorter than two frames
};

FeatureTable extract_features(const std::vector<VehicleTrack>& tracks);

/// Headway values above this are treated as free driving when clustering.
inline constexpr double kThwCap = 10.0;
inline constexpr int kNumericFeatures = 6;

/// Raw numeric feature matrix (one row per vehicle) and categorical codes.
Eigen::MatrixXd numeric_features(const std::vector<DriverFeatures>& rows);
std::vector<std::vector<int>> categorical_features(const std::vector<DriverFeatures>& rows);

struct Standardization {
  Eigen::RowVectorXd mean;
  Eigen::RowVectorXd scale;  // population std, 1 for constant columns
};
Standardization fit_standardization(const Eigen::MatrixXd& x);
Eigen::MatrixXd standardize(const Eigen::MatrixXd& x, const Standardization& s);

struct KPrototypesResult {
  std::vector<int> assignment;
  Eigen::MatrixXd centroids;  // k x d
  std::vector<std::vector<int>> modes;  // k x categorical attributes
  std::vector<double> cost_history;  // cost after every assignment step
  int iterations = 0;
  bool converged = false;
};

/// Squared Euclidean distance plus gamma times the categorical mismatch count.
double kprototypes_distance(const Eigen::Ref<const Eigen::RowVectorXd>& x,
                            const std::vector<int>& cats,
                            const Eigen::Ref<const Eigen::RowVectorXd>& centroid,
                            const std::vector<int>& mode, double gamma);

/// k-means++ style seeding under the mixed distance.
std::vector<int> seed_rows(const Eigen::MatrixXd& x, const std::vector<std::vector<int>>& cats,
                           int k, double gamma, std::uint64_t rng_seed);

/// Lloyd iterations from the given initial prototype rows.
KPrototypesResult kprototypes(const Eigen::MatrixXd& x, const std::vector<std::vector<int>>& cats,
                              int k, double gamma, const std::vector<int>& initial_rows,
                              int max_iterations = 100);

struct ClusterModel {
  int k = 3;
  Eigen::MatrixXd numeric_centroids;  // standardized space
  std::vector<std::vector<int>> categorical_modes;
  double gamma_mix = 0.0;
  Standardization standardization;
  std::vector<int> assignment;          // cluster per input row
  std::vector<Behavior> cluster_names;  // behavior per cluster
  std::vector<Behavior> labels;         // behavior per input row
  std::map<int, Behavior> labels_by_id;  // last row wins on duplicate ids
  std::vector<double> cost_history;
  int iterations = 0;
};

/// Default mixing weight: half the mean variance of the standardized columns.
double default_gamma(const Eigen::MatrixXd& standardized);

/// Best of n_init seeded runs by final cost. Throws std::invalid_argument
/// when there are fewer rows than k.
ClusterModel fit_kprototypes(const std::vector<DriverFeatures>& rows, int k = 3,
                             std::optional<double> gamma_mix = std::nullopt,
                             std::uint64_t rng_seed = 0, int n_init = 10);

/// Both vehicles of a critical pair at the peak frame.
struct PairVehicle {
  int vehicle_id = 0;
  TrackRow row;
  VehicleKind kind = VehicleKind::car;
  int driving_direction = 2;
};

struct PairInstance {
  PairVehicle follower;
  PairVehicle leader;
  int frame = 0;
  double rp = 0.0;
};

/// Peak risk perception per (follower, leader) pair, sorted by rp descending
/// (ties: follower id, then leader id). top_n = 0 keeps all.
std::vector<PairInstance> extract_critical_pairs(const std::vector<VehicleTrack>& tracks,
                                                 const RpParams& params = {},
                                                 std::size_t top_n = 0);

struct IngestOptions {
  int k = 3;
  std::optional<double> gamma_mix;
  std::uint64_t seed = 0;
  int max_vehicles = 24;   // simulator budget per configuration
  double follower_x = 60.0;  // where the pair follower is placed
  RangeTable ranges;
  RpParams rp;
};

struct FileStatus {
  std::string recording;
  bool ok = false;
  std::string message;
  std::string config_id;
};

struct IngestResult {
  std::vector<ScenarioConfig> configs;
  std::vector<FileStatus> files;
  std::vector<std::vector<PairInstance>> pairs;  // ranked list per emitted config
  int skipped_tracks = 0;
  std::optional<ClusterModel> model;
};

/// One configuration per parseable recording. Unparseable recordings are
/// reported in `files` and skipped. Clustering runs once over all vehicles.
IngestResult ingest(const std::vector<std::filesystem::path>& recordings,
                    const IngestOptions& options = {});

/// Runs ingest and writes the database. Returns the number of configs written.
std::size_t build_database(const std::vector<std::filesystem::path>& recordings,
                           const std::filesystem::path& out_path,
                           const IngestOptions& options = {}, IngestResult* result = nullptr);

struct SyntheticOptions {
  int vehicles = 60;
  int lanes = 3;
  double road_length = 400.0;  // [m]
  double duration = 120.0;     // [s]
  double frame_rate = 5.0;
  double defensive_truck_fraction = 0.4;
  // Class mean desired speeds [m/s].
  double aggressive_speed = 38.0;
  double regular_speed = 30.0;
  double defensive_speed = 22.0;
  double speed_spread = 1.5;
};

struct SyntheticRecording {
  Recording recording;
  std::map<int, Behavior> truth;
};

/// Highway recording with three driving styles in highD layout. Vehicles
/// follow a simple car-following and overtaking model.
SyntheticRecording generate_synthetic(int recording_id, std::uint64_t seed,
                                      const SyntheticOptions& options = {});

struct SyntheticFeatures {
  std::vector<DriverFeatures> rows;
  std::vector<Behavior> truth;
};

/// Three driver-style blobs in feature space, class mean speeds
/// speed_gap apart (aggressive fastest), identical truck share per class.
SyntheticFeatures synthetic_features(int per_class, std::uint64_t seed, double speed_gap = 10.0);

}  // namespace critical::highd
