#include "hsicgcn/skeleton.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <sstream>

namespace hsicgcn {

ParseError::ParseError(int line, const std::string& message)
    : std::runtime_error("line " + std::to_string(line) + ": " + message), line_(line) {}

namespace {

/// Splits text into lines, remembering 1-based line numbers and skipping blank lines.
class LineReader {
 public:
  explicit LineReader(std::string_view text) : text_(text) {}

  bool next(std::string_view& line) {
    while (pos_ < text_.size()) {
      const std::size_t end = text_.find('\n', pos_);
      const std::size_t stop = end == std::string_view::npos ? text_.size() : end;
      line = text_.substr(pos_, stop - pos_);
      pos_ = stop + 1;
      ++line_number_;
      if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
      if (line.find_first_not_of(" \t") != std::string_view::npos) return true;
    }
    return false;
  }

  std::string_view require(const char* what) {
    std::string_view line;
    if (!next(line)) throw ParseError(line_number_ + 1, std::string("unexpected end of input, expected ") + what);
    return line;
  }

  int line_number() const { return line_number_; }

 private:
  std::string_view text_;
  std::size_t pos_ = 0;
  int line_number_ = 0;
};

std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> fields;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == ',')) ++i;
    const std::size_t start = i;
    while (i < line.size() && line[i] != ' ' && line[i] != '\t' && line[i] != ',') ++i;
    if (i > start) fields.push_back(line.substr(start, i - start));
  }
  return fields;
}

double parse_real(std::string_view token, int line) {
  double value = 0.0;
  const auto* first = token.data();
  const auto* last = token.data() + token.size();
  if (!token.empty() && *first == '+') ++first;
  const auto [ptr, ec] = std::from_chars(first, last, value);
  if (ec != std::errc() || ptr != last || !std::isfinite(value)) {
    throw ParseError(line, "non-numeric token '" + std::string(token) + "'");
  }
  return value;
}

long parse_count(std::string_view line, int line_number, const char* what) {
  const auto fields = split_fields(line);
  long value = -1;
  if (fields.size() == 1) {
    const auto [ptr, ec] = std::from_chars(fields[0].data(), fields[0].data() + fields[0].size(), value);
    if (ec != std::errc() || ptr != fields[0].data() + fields[0].size()) value = -1;
  }
  if (value < 0) throw ParseError(line_number, std::string("malformed ") + what + " '" + std::string(line) + "'");
  return value;
}

}  // namespace

std::vector<MotionSequence> parse_skeleton_file(std::string_view text, MissingBodyPolicy policy) {
  LineReader reader(text);
  std::string_view line;
  if (!reader.next(line)) return {};
  const long frame_count = parse_count(line, reader.line_number(), "frame count");

  struct Track {
    std::vector<std::optional<Matrix>> frames;
  };
  std::vector<std::string> order;
  std::map<std::string, Track> tracks;
  int joint_count = -1;

  for (long f = 0; f < frame_count; ++f) {
    const long bodies = parse_count(reader.require("body count"), reader.line_number(), "body count");
    for (long b = 0; b < bodies; ++b) {
      const auto info = split_fields(reader.require("body info line"));
      if (info.empty()) throw ParseError(reader.line_number(), "empty body info line");
      const std::string body_id(info[0]);

      const long joints = parse_count(reader.require("joint count"), reader.line_number(), "joint count");
      if (joints < 1) throw ParseError(reader.line_number(), "joint count must be positive");
      if (joint_count < 0) joint_count = static_cast<int>(joints);
      if (joints != joint_count) {
        throw ParseError(reader.line_number(), "joint count mismatch: expected " + std::to_string(joint_count) +
                                                   ", got " + std::to_string(joints));
      }

      Matrix coords(joint_count, 3);
      for (int j = 0; j < joint_count; ++j) {
        const auto fields = split_fields(reader.require("joint line"));
        const int ln = reader.line_number();
        if (fields.size() < 3) throw ParseError(ln, "joint line needs at least 3 fields");
        for (int c = 0; c < 3; ++c) coords(j, c) = parse_real(fields[c], ln);
      }

      auto [it, inserted] = tracks.try_emplace(body_id);
      if (inserted) {
        order.push_back(body_id);
        it->second.frames.resize(frame_count);
      }
      // Duplicate body ids within a frame keep the first occurrence.
      if (!it->second.frames[f]) it->second.frames[f] = std::move(coords);
    }
  }
  if (reader.next(line)) throw ParseError(reader.line_number(), "trailing content after final frame");

  std::vector<MotionSequence> out;
  for (const auto& id : order) {
    const auto& track = tracks.at(id);
    std::vector<const Matrix*> kept;
    for (const auto& frame : track.frames) {
      if (frame) {
        kept.push_back(&*frame);
      } else if (policy == MissingBodyPolicy::zero_fill) {
        kept.push_back(nullptr);
      }
    }
    const int t_count = static_cast<int>(kept.size());
    Matrix data = Matrix::Zero(static_cast<Eigen::Index>(t_count) * joint_count, 3);
    for (int t = 0; t < t_count; ++t) {
      if (kept[t]) data.middleRows(static_cast<Eigen::Index>(t) * joint_count, joint_count) = *kept[t];
    }
    out.emplace_back(t_count, joint_count, std::move(data));
  }
  return out;
}

// ---------------------------------------------------------------------------

namespace {

constexpr const char* kDatasetMagic = "hsicgcn-dataset";

std::vector<std::string_view> expect_keyword(LineReader& reader, const char* keyword, std::size_t min_fields) {
  const auto fields = split_fields(reader.require(keyword));
  if (fields.empty() || fields[0] != keyword || fields.size() < min_fields) {
    throw ParseError(reader.line_number(), std::string("expected '") + keyword + "' record");
  }
  return fields;
}

long field_int(std::string_view token, int line) {
  long value = 0;
  const auto [ptr, ec] = std::from_chars(token.data(), token.data() + token.size(), value);
  if (ec != std::errc() || ptr != token.data() + token.size()) {
    throw ParseError(line, "expected integer, got '" + std::string(token) + "'");
  }
  return value;
}

}  // namespace

void write_dataset(std::ostream& out, const Dataset& dataset) {
  validate(dataset);
  out << kDatasetMagic << " 1\n";
  out << "classes " << dataset.num_classes << "\n";
  out << "split " << to_string(dataset.split) << "\n";
  out << "parents";
  for (int p : dataset.graph.parents()) out << ' ' << p;
  out << "\nsequences " << dataset.sequences.size() << "\n";
  out << std::setprecision(std::numeric_limits<double>::max_digits10);
  for (const auto& seq : dataset.sequences) {
    out << "sequence " << seq.frames() << ' ' << seq.joints() << ' ' << seq.channels() << ' '
        << seq.label().value_or(-1) << ' ' << dataset.num_classes << "\n";
    for (int t = 0; t < seq.frames(); ++t) {
      const auto frame = seq.frame(t);
      bool first = true;
      for (Eigen::Index j = 0; j < frame.rows(); ++j) {
        for (Eigen::Index c = 0; c < frame.cols(); ++c) {
          if (!first) out << ' ';
          out << frame(j, c);
          first = false;
        }
      }
      out << "\n";
    }
  }
}

Dataset read_dataset(std::istream& in) {
  const std::string text{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  LineReader reader(text);

  const auto magic = split_fields(reader.require("dataset header"));
  if (magic.size() != 2 || magic[0] != kDatasetMagic || magic[1] != "1") {
    throw ParseError(reader.line_number(), "not a hsicgcn-dataset v1 file");
  }
  Dataset dataset;
  dataset.num_classes = static_cast<int>(field_int(expect_keyword(reader, "classes", 2)[1], reader.line_number()));
  try {
    dataset.split = parse_split(std::string(expect_keyword(reader, "split", 2)[1]));
  } catch (const std::invalid_argument& e) {
    throw ParseError(reader.line_number(), e.what());
  }
  {
    const auto fields = expect_keyword(reader, "parents", 2);
    std::vector<int> parents;
    for (std::size_t i = 1; i < fields.size(); ++i) {
      parents.push_back(static_cast<int>(field_int(fields[i], reader.line_number())));
    }
    try {
      dataset.graph = SkeletonGraph::from_parents(std::move(parents));
    } catch (const std::invalid_argument& e) {
      throw ParseError(reader.line_number(), e.what());
    }
  }
  const long count = field_int(expect_keyword(reader, "sequences", 2)[1], reader.line_number());
  if (count < 0) throw ParseError(reader.line_number(), "negative sequence count");

  for (long s = 0; s < count; ++s) {
    const auto header = expect_keyword(reader, "sequence", 6);
    const int ln = reader.line_number();
    const long frames = field_int(header[1], ln);
    const long joints = field_int(header[2], ln);
    const long channels = field_int(header[3], ln);
    const long label = field_int(header[4], ln);
    const long classes = field_int(header[5], ln);
    if (frames < 1 || joints < 1 || channels < 1) throw ParseError(ln, "non-positive sequence dimensions");
    if (classes != dataset.num_classes) throw ParseError(ln, "class count disagrees with file header");
    if (label < -1 || label >= classes) throw ParseError(ln, "label out of range");

    Matrix data(frames * joints, channels);
    for (long t = 0; t < frames; ++t) {
      const auto values = split_fields(reader.require("frame row"));
      const int row_line = reader.line_number();
      if (static_cast<long>(values.size()) != joints * channels) {
        throw ParseError(row_line, "frame row has " + std::to_string(values.size()) + " values, expected " +
                                       std::to_string(joints * channels));
      }
      for (long j = 0; j < joints; ++j) {
        for (long c = 0; c < channels; ++c) data(t * joints + j, c) = parse_real(values[j * channels + c], row_line);
      }
    }
    std::optional<int> lab;
    if (label >= 0) lab = static_cast<int>(label);
    dataset.sequences.emplace_back(static_cast<int>(frames), static_cast<int>(joints), std::move(data), lab);
  }
  std::string_view extra;
  if (reader.next(extra)) throw ParseError(reader.line_number(), "trailing content after final sequence");
  try {
    validate(dataset);
  } catch (const std::exception& e) {
    throw ParseError(reader.line_number(), e.what());
  }
  return dataset;
}

void save_dataset(const std::string& path, const Dataset& dataset) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
  write_dataset(out, dataset);
}

Dataset load_dataset(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open dataset '" + path + "'");
  return read_dataset(in);
}

}  // namespace hsicgcn
