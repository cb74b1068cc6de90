#include "dilbench/schema.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "dilbench/error.hpp"
#include "dilbench/kv.hpp"

namespace dilbench {

std::optional<std::size_t> ChannelSpec::label_index(const std::string& label) const {
  const auto it = std::find(labels.begin(), labels.end(), label);
  if (it == labels.end()) return std::nullopt;
  return static_cast<std::size_t>(it - labels.begin());
}

std::size_t ChannelSpec::label_for_score(double score) const {
  const auto [lo, hi] = std::minmax_element(label_scores.begin(), label_scores.end());
  const double target = std::clamp(std::round(score), *lo, *hi);
  std::size_t best = 0;
  double best_gap = INFINITY;
  for (std::size_t i = 0; i < label_scores.size(); ++i) {
    const double gap = std::abs(label_scores[i] - target);
    if (gap < best_gap) {
      best_gap = gap;
      best = i;
    }
  }
  return best;
}

ChannelSchema::ChannelSchema(std::vector<ChannelSpec> channels) : channels_(std::move(channels)) { layout(); }

void ChannelSchema::layout() {
  value_offsets_.clear();
  std::size_t offset = 0;
  for (const auto& c : channels_) {
    if (c.kind == ChannelKind::categorical) {
      if (c.labels.empty() || c.labels.size() != c.label_scores.size()) {
        throw Error(ErrorKind::SchemaMismatch, "categorical channel " + c.name + " needs labels with scores");
      }
      if (c.normal_value < 0 || static_cast<std::size_t>(c.normal_value) >= c.labels.size()) {
        throw Error(ErrorKind::SchemaMismatch, "normal label index out of range for " + c.name);
      }
    }
    value_offsets_.push_back(offset);
    offset += c.value_width();
  }
  mask_begin_ = offset;
  total_width_ = offset + channels_.size();
}

std::optional<std::size_t> ChannelSchema::index_of(const std::string& name) const {
  for (std::size_t i = 0; i < channels_.size(); ++i) {
    if (channels_[i].name == name) return i;
  }
  return std::nullopt;
}

std::vector<std::size_t> ChannelSchema::continuous_columns() const {
  std::vector<std::size_t> cols;
  for (std::size_t i = 0; i < channels_.size(); ++i) {
    if (channels_[i].kind == ChannelKind::continuous) cols.push_back(value_offsets_[i]);
  }
  return cols;
}

ChannelSchema ChannelSchema::standard() {
  auto continuous = [](std::string name, double normal) {
    ChannelSpec c;
    c.name = std::move(name);
    c.kind = ChannelKind::continuous;
    c.normal_value = normal;
    return c;
  };
  auto categorical = [](std::string name, std::vector<std::string> labels, std::vector<double> scores,
                        std::size_t normal_label) {
    ChannelSpec c;
    c.name = std::move(name);
    c.kind = ChannelKind::categorical;
    c.labels = std::move(labels);
    c.label_scores = std::move(scores);
    c.normal_value = static_cast<double>(normal_label);
    return c;
  };

  // Label sets follow the reference benchmark's channel dictionary; several
  // spellings map to the same score and each keeps its own one-hot column.
  std::vector<ChannelSpec> ch;
  ch.push_back(categorical("Capillary refill rate", {"0.0", "1.0"}, {0, 1}, 0));
  ch.push_back(continuous("Diastolic blood pressure", 59.0));
  ch.push_back(continuous("Fraction inspired oxygen", 0.21));
  ch.push_back(categorical("Glascow coma scale eye opening",
                           {"1 No Response", "2 To pain", "3 To speech", "4 Spontaneously", "None", "To Pain",
                            "To Speech", "Spontaneously"},
                           {1, 2, 3, 4, 1, 2, 3, 4}, 3));
  ch.push_back(categorical("Glascow coma scale motor response",
                           {"1 No Response", "2 Abnorm extensn", "3 Abnorm flexion", "4 Flex-withdraws",
                            "5 Localizes Pain", "6 Obeys Commands", "No response", "Abnormal extension",
                            "Abnormal Flexion", "Flex-withdraws", "Localizes Pain", "Obeys Commands"},
                           {1, 2, 3, 4, 5, 6, 1, 2, 3, 4, 5, 6}, 5));
  ch.push_back(categorical("Glascow coma scale total",
                           {"3", "4", "5", "6", "7", "8", "9", "10", "11", "12", "13", "14", "15"},
                           {3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15}, 12));
  ch.push_back(categorical("Glascow coma scale verbal response",
                           {"1.0 ET/Trach", "2 Incomp sounds", "3 Inapprop words", "4 Confused", "5 Oriented",
                            "1 Na/ET", "No Response-ETT", "No Response", "Incomprehensible sounds",
                            "Inappropriate Words", "Confused", "Oriented"},
                           {1, 2, 3, 4, 5, 1, 1, 1, 2, 3, 4, 5}, 4));
  ch.push_back(continuous("Glucose", 128.0));
  ch.push_back(continuous("Heart Rate", 86.0));
  ch.push_back(continuous("Height", 170.0));
  ch.push_back(continuous("Mean blood pressure", 77.0));
  ch.push_back(continuous("Oxygen saturation", 98.0));
  ch.push_back(continuous("Respiratory rate", 19.0));
  ch.push_back(continuous("Systolic blood pressure", 118.0));
  ch.push_back(continuous("Temperature", 37.0));
  ch.push_back(continuous("Weight", 81.0));
  ch.push_back(continuous("pH", 7.4));
  return ChannelSchema(std::move(ch));
}

// Schema file lines:
//   channel = <name> | continuous
//   channel = <name> | categorical | <label>:<score>; <label>:<score>; ...
// Normal-value file lines:
//   <name> = <number>            (continuous)
//   <name> = <label>             (categorical)
ChannelSchema ChannelSchema::load(const std::filesystem::path& schema_file,
                                  const std::optional<std::filesystem::path>& normal_values_file) {
  std::vector<ChannelSpec> channels;
  for (const auto& kv : read_key_values(schema_file)) {
    const std::string where = schema_file.string() + ":" + std::to_string(kv.line);
    if (kv.key != "channel") throw Error(ErrorKind::MalformedFile, where + ": unknown key " + kv.key);
    const auto fields = split(kv.value, '|');
    if (fields.size() < 2) throw Error(ErrorKind::MalformedFile, where + ": expected name | kind");
    ChannelSpec c;
    c.name = trim(fields[0]);
    const std::string kind = trim(fields[1]);
    if (kind == "continuous") {
      c.kind = ChannelKind::continuous;
    } else if (kind == "categorical") {
      c.kind = ChannelKind::categorical;
      if (fields.size() < 3) throw Error(ErrorKind::MalformedFile, where + ": categorical channel needs labels");
      for (const auto& item : split(fields[2], ';')) {
        const auto colon = item.rfind(':');
        if (colon == std::string::npos) throw Error(ErrorKind::MalformedFile, where + ": label without score");
        c.labels.push_back(trim(item.substr(0, colon)));
        c.label_scores.push_back(parse_double(item.substr(colon + 1), where));
      }
    } else {
      throw Error(ErrorKind::MalformedFile, where + ": unknown channel kind " + kind);
    }
    channels.push_back(std::move(c));
  }

  // Defaults from the standard table where names match, then the override file.
  const ChannelSchema standard_schema = standard();
  for (auto& c : channels) {
    if (const auto idx = standard_schema.index_of(c.name)) {
      const auto& s = standard_schema.channel(*idx);
      if (s.kind == c.kind && (c.kind == ChannelKind::continuous || s.labels == c.labels)) {
        c.normal_value = s.normal_value;
      }
    }
  }
  if (normal_values_file) {
    for (const auto& kv : read_key_values(*normal_values_file)) {
      const std::string where = normal_values_file->string() + ":" + std::to_string(kv.line);
      auto it = std::find_if(channels.begin(), channels.end(), [&](const ChannelSpec& c) { return c.name == kv.key; });
      if (it == channels.end()) throw Error(ErrorKind::MalformedFile, where + ": unknown channel " + kv.key);
      if (it->kind == ChannelKind::continuous) {
        it->normal_value = parse_double(kv.value, where);
      } else {
        const auto idx = it->label_index(kv.value);
        if (!idx) throw Error(ErrorKind::MalformedFile, where + ": unknown label " + kv.value);
        it->normal_value = static_cast<double>(*idx);
      }
    }
  }
  return ChannelSchema(std::move(channels));
}

void ChannelSchema::save(const std::filesystem::path& schema_file) const {
  std::ofstream out(schema_file);
  if (!out) throw Error(ErrorKind::IoFailure, "cannot write " + schema_file.string());
  out << "# channel = <name> | continuous\n"
      << "# channel = <name> | categorical | <label>:<score>; ...\n";
  for (const auto& c : channels_) {
    out << "channel = " << c.name << " | "
        << (c.kind == ChannelKind::continuous ? "continuous" : "categorical");
    if (c.kind == ChannelKind::categorical) {
      out << " | ";
      for (std::size_t i = 0; i < c.labels.size(); ++i) {
        out << (i ? "; " : "") << c.labels[i] << ':' << format_double(c.label_scores[i]);
      }
    }
    out << '\n';
  }
}

void ChannelSchema::save_normal_values(const std::filesystem::path& normal_values_file) const {
  std::ofstream out(normal_values_file);
  if (!out) throw Error(ErrorKind::IoFailure, "cannot write " + normal_values_file.string());
  out << "# imputation fallback when a channel has no earlier value\n";
  for (const auto& c : channels_) {
    out << c.name << " = ";
    if (c.kind == ChannelKind::continuous) {
      out << format_double(c.normal_value);
    } else {
      out << c.labels.at(static_cast<std::size_t>(c.normal_value));
    }
    out << '\n';
  }
}

}  // namespace dilbench
