#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>
#include <string_view>
#include <unordered_map>

#include "critical/highd.hpp"

namespace critical::highd {

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

std::vector<std::string_view> split(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    if (comma == std::string_view::npos) {
      out.push_back(trim(line.substr(start)));
      return out;
    }
    out.push_back(trim(line.substr(start, comma - start)));
    start = comma + 1;
  }
}

// Header-indexed CSV table read line by line.
class Table {
 public:
  Table(std::istream& in, std::string name) : in_(in), name_(std::move(name)) {
    std::string header;
    if (!std::getline(in_, header)) throw ParseError(name_, "", 0, name_ + ": empty file");
    const auto cols = split(header);
    for (std::size_t i = 0; i < cols.size(); ++i) index_.emplace(std::string(cols[i]), i);
  }

  std::size_t require(const std::string& column) const {
    const auto it = index_.find(column);
    if (it == index_.end()) {
      throw ParseError(name_, column, 0, name_ + ": missing required column '" + column + "'");
    }
    return it->second;
  }

  std::optional<std::size_t> find(const std::string& column) const {
    const auto it = index_.find(column);
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  bool next() {
    while (std::getline(in_, line_)) {
      if (trim(line_).empty()) continue;
      ++row_;
      fields_ = split(line_);
      if (fields_.size() < index_.size()) {
        throw ParseError(name_, "", row_,
                         name_ + ": row " + std::to_string(row_) + " has " +
                             std::to_string(fields_.size()) + " fields, expected " +
                             std::to_string(index_.size()));
      }
      return true;
    }
    return false;
  }

  double number(std::size_t col, const std::string& column) const {
    const std::string_view cell = fields_[col];
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
    if (ec != std::errc() || ptr != cell.data() + cell.size() || cell.empty()) {
      throw ParseError(name_, column, row_,
                       name_ + ": row " + std::to_string(row_) + ", column '" + column +
                           "': not a number: '" + std::string(cell) + "'");
    }
    return v;
  }

  int integer(std::size_t col, const std::string& column) const {
    const double v = number(col, column);
    if (v != std::floor(v) || std::abs(v) > 2e9) {
      throw ParseError(name_, column, row_,
                       name_ + ": row " + std::to_string(row_) + ", column '" + column +
                           "': not an integer");
    }
    return static_cast<int>(v);
  }

  std::string_view text(std::size_t col) const { return fields_[col]; }
  std::size_t row() const { return row_; }
  const std::string& name() const { return name_; }

 private:
  std::istream& in_;
  std::string name_;
  std::unordered_map<std::string, std::size_t> index_;
  std::string line_;
  std::vector<std::string_view> fields_;
  std::size_t row_ = 0;
};

struct MetaEntry {
  VehicleKind kind = VehicleKind::car;
  int num_lane_changes = 0;
  std::optional<int> direction;
};

std::map<int, MetaEntry> parse_tracks_meta(std::istream& in, const std::string& name) {
  Table t(in, name);
  const auto c_id = t.require("id");
  const auto c_class = t.require("class");
  const auto c_changes = t.require("numLaneChanges");
  const auto c_dir = t.find("drivingDirection");
  std::map<int, MetaEntry> out;
  while (t.next()) {
    MetaEntry e;
    std::string cls(t.text(c_class));
    std::transform(cls.begin(), cls.end(), cls.begin(),
                   [](unsigned char ch) { return static_cast<char>(std::tolower(ch)); });
    if (cls == "car") {
      e.kind = VehicleKind::car;
    } else if (cls == "truck") {
      e.kind = VehicleKind::truck;
    } else {
      throw ParseError(name, "class", t.row(),
                       name + ": row " + std::to_string(t.row()) + ", column 'class': unknown '" +
                           cls + "'");
    }
    e.num_lane_changes = t.integer(c_changes, "numLaneChanges");
    if (c_dir) e.direction = t.integer(*c_dir, "drivingDirection");
    out[t.integer(c_id, "id")] = e;
  }
  return out;
}

std::string format_number(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::ifstream open_input(const std::filesystem::path& p) {
  std::ifstream in(p);
  if (!in) throw ParseError(p.string(), "", 0, "cannot open " + p.string());
  return in;
}

}  // namespace

std::vector<VehicleTrack> parse_tracks(std::istream& tracks, std::istream& tracks_meta,
                                       const std::string& tracks_name,
                                       const std::string& meta_name) {
  Table t(tracks, tracks_name);
  const char* names[] = {"frame",         "id",           "x",   "y",   "width",
                         "height",        "xVelocity",    "yVelocity", "xAcceleration",
                         "yAcceleration", "dhw",          "thw", "ttc", "precedingId",
                         "laneId"};
  std::size_t col[15];
  for (std::size_t i = 0; i < 15; ++i) col[i] = t.require(names[i]);
  const std::map<int, MetaEntry> meta = parse_tracks_meta(tracks_meta, meta_name);

  std::map<int, VehicleTrack> grouped;
  while (t.next()) {
    TrackRow r;
    r.frame = t.integer(col[0], names[0]);
    r.vehicle_id = t.integer(col[1], names[1]);
    r.x = t.number(col[2], names[2]);
    r.y = t.number(col[3], names[3]);
    r.width = t.number(col[4], names[4]);
    r.height = t.number(col[5], names[5]);
    r.x_velocity = t.number(col[6], names[6]);
    r.y_velocity = t.number(col[7], names[7]);
    r.x_acceleration = t.number(col[8], names[8]);
    r.y_acceleration = t.number(col[9], names[9]);
    r.dhw = t.number(col[10], names[10]);
    r.thw = t.number(col[11], names[11]);
    r.ttc = t.number(col[12], names[12]);
    r.preceding_id = t.integer(col[13], names[13]);
    r.lane_id = t.integer(col[14], names[14]);
    if (r.frame < 1) {
      throw ParseError(tracks_name, "frame", t.row(),
                       tracks_name + ": row " + std::to_string(t.row()) + ": frame must be >= 1");
    }
    if (!(r.width > 0.0)) {
      throw ParseError(tracks_name, "width", t.row(),
                       tracks_name + ": row " + std::to_string(t.row()) + ": width must be > 0");
    }
    auto& track = grouped[r.vehicle_id];
    track.id = r.vehicle_id;
    track.rows.push_back(r);
  }

  std::vector<VehicleTrack> out;
  out.reserve(grouped.size());
  for (auto& [id, track] : grouped) {
    const auto m = meta.find(id);
    if (m == meta.end()) {
      throw ParseError(meta_name, "id", 0,
                       meta_name + ": no entry for vehicle " + std::to_string(id));
    }
    track.kind = m->second.kind;
    track.num_lane_changes = m->second.num_lane_changes;
    std::stable_sort(track.rows.begin(), track.rows.end(),
                     [](const TrackRow& a, const TrackRow& b) { return a.frame < b.frame; });
    if (m->second.direction) {
      track.driving_direction = *m->second.direction;
    } else {
      double vx = 0.0;
      for (const auto& r : track.rows) vx += r.x_velocity;
      track.driving_direction = vx < 0.0 ? 1 : 2;
    }
    out.push_back(std::move(track));
  }
  return out;
}

std::vector<VehicleTrack> parse_tracks(const std::filesystem::path& tracks_path,
                                       const std::filesystem::path& tracks_meta_path) {
  auto tracks = open_input(tracks_path);
  auto meta = open_input(tracks_meta_path);
  return parse_tracks(tracks, meta, tracks_path.string(), tracks_meta_path.string());
}

RecordingMeta parse_recording_meta(std::istream& in, const std::string& name) {
  Table t(in, name);
  const auto c_id = t.require("id");
  const auto c_rate = t.require("frameRate");
  const auto c_num = t.require("numVehicles");
  if (!t.next()) throw ParseError(name, "", 0, name + ": no data row");
  RecordingMeta m;
  m.id = t.integer(c_id, "id");
  m.frame_rate = t.number(c_rate, "frameRate");
  m.num_vehicles = t.integer(c_num, "numVehicles");
  if (!(m.frame_rate > 0.0)) throw ParseError(name, "frameRate", 1, name + ": frameRate must be > 0");
  return m;
}

RecordingFiles recording_files(const std::filesystem::path& recording) {
  std::string base = recording.string();
  const std::string suffix = "_tracks.csv";
  if (base.size() > suffix.size() && base.compare(base.size() - suffix.size(), suffix.size(), suffix) == 0) {
    base.resize(base.size() - suffix.size());
  }
  RecordingFiles f;
  f.tracks = base + "_tracks.csv";
  f.tracks_meta = base + "_tracksMeta.csv";
  f.recording_meta = base + "_recordingMeta.csv";
  f.name = std::filesystem::path(base).filename().string();
  return f;
}

Recording load_recording(const std::filesystem::path& recording) {
  const RecordingFiles f = recording_files(recording);
  Recording r;
  r.name = f.name;
  auto meta = open_input(f.recording_meta);
  r.meta = parse_recording_meta(meta, f.recording_meta.string());
  r.tracks = parse_tracks(f.tracks, f.tracks_meta);
  return r;
}

std::string tracks_csv(const Recording& rec) {
  // Rows are written frame-major like the original files. Columns beyond the
  // consumed set are filled in as far as they can be derived.
  struct Ref {
    const TrackRow* row;
  };
  std::vector<Ref> all;
  for (const auto& t : rec.tracks) {
    for (const auto& r : t.rows) all.push_back({&r});
  }
  std::stable_sort(all.begin(), all.end(), [](const Ref& a, const Ref& b) {
    return a.row->frame != b.row->frame ? a.row->frame < b.row->frame
                                        : a.row->vehicle_id < b.row->vehicle_id;
  });
  std::map<std::pair<int, int>, const TrackRow*> by_frame;
  for (const auto& ref : all) by_frame[{ref.row->frame, ref.row->vehicle_id}] = ref.row;

  std::ostringstream out;
  out << "frame,id,x,y,width,height,xVelocity,yVelocity,xAcceleration,yAcceleration,"
         "frontSightDistance,backSightDistance,dhw,thw,ttc,precedingXVelocity,precedingId,"
         "followingId,leftPrecedingId,leftAlongsideId,leftFollowingId,rightPrecedingId,"
         "rightAlongsideId,rightFollowingId,laneId\n";
  std::map<std::pair<int, int>, int> follower_of;
  for (const auto& ref : all) {
    if (ref.row->preceding_id != 0) follower_of[{ref.row->frame, ref.row->preceding_id}] = ref.row->vehicle_id;
  }
  for (const auto& ref : all) {
    const TrackRow& r = *ref.row;
    double preceding_vx = 0.0;
    if (const auto it = by_frame.find({r.frame, r.preceding_id}); r.preceding_id != 0 && it != by_frame.end()) {
      preceding_vx = it->second->x_velocity;
    }
    const auto f = follower_of.find({r.frame, r.vehicle_id});
    out << r.frame << ',' << r.vehicle_id << ',' << format_number(r.x) << ',' << format_number(r.y)
        << ',' << format_number(r.width) << ',' << format_number(r.height) << ','
        << format_number(r.x_velocity) << ',' << format_number(r.y_velocity) << ','
        << format_number(r.x_acceleration) << ',' << format_number(r.y_acceleration) << ",0,0,"
        << format_number(r.dhw) << ',' << format_number(r.thw) << ',' << format_number(r.ttc)
        << ',' << format_number(preceding_vx) << ',' << r.preceding_id << ','
        << (f == follower_of.end() ? 0 : f->second) << ",0,0,0,0,0,0," << r.lane_id << '\n';
  }
  return out.str();
}

std::string tracks_meta_csv(const Recording& rec) {
  std::ostringstream out;
  out << "id,width,height,initialFrame,finalFrame,numFrames,class,drivingDirection,"
         "numLaneChanges\n";
  for (const auto& t : rec.tracks) {
    const double w = t.rows.empty() ? 0.0 : t.rows.front().width;
    const double h = t.rows.empty() ? 0.0 : t.rows.front().height;
    const int first = t.rows.empty() ? 0 : t.rows.front().frame;
    const int last = t.rows.empty() ? 0 : t.rows.back().frame;
    out << t.id << ',' << format_number(w) << ',' << format_number(h) << ',' << first << ','
        << last << ',' << t.rows.size() << ','
        << (t.kind == VehicleKind::truck ? "Truck" : "Car") << ',' << t.driving_direction << ','
        << t.num_lane_changes << '\n';
  }
  return out.str();
}

std::string recording_meta_csv(const Recording& rec) {
  int trucks = 0;
  for (const auto& t : rec.tracks) trucks += t.kind == VehicleKind::truck;
  const int cars = static_cast<int>(rec.tracks.size()) - trucks;
  std::ostringstream out;
  out << "id,frameRate,locationId,speedLimit,numVehicles,numCars,numTrucks\n";
  out << rec.meta.id << ',' << format_number(rec.meta.frame_rate) << ",0,-1,"
      << rec.meta.num_vehicles << ',' << cars << ',' << trucks << '\n';
  return out.str();
}

void write_recording(const std::filesystem::path& prefix, const Recording& rec) {
  const RecordingFiles f = recording_files(prefix);
  if (f.tracks.has_parent_path()) std::filesystem::create_directories(f.tracks.parent_path());
  auto write = [](const std::filesystem::path& p, const std::string& text) {
    std::ofstream out(p, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + p.string());
    out << text;
  };
  write(f.tracks, tracks_csv(rec));
  write(f.tracks_meta, tracks_meta_csv(rec));
  write(f.recording_meta, recording_meta_csv(rec));
}

}  // namespace critical::highd
