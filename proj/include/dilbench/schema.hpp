#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace dilbench {

enum class ChannelKind { continuous, categorical };

struct ChannelSpec {
  std::string name;
  ChannelKind kind = ChannelKind::continuous;
  // Categorical only: one-hot column labels and the ordinal score each maps to.
  std::vector<std::string> labels;
  std::vector<double> label_scores;
  // Imputation fallback. For categorical channels this is a label index.
  double normal_value = 0.0;

  [[nodiscard]] std::size_t value_width() const noexcept {
    return kind == ChannelKind::categorical ? labels.size() : 1;
  }
  [[nodiscard]] std::optional<std::size_t> label_index(const std::string& label) const;
  // Index of the first label whose score equals round(score) clamped to the score range.
  [[nodiscard]] std::size_t label_for_score(double score) const;
};

// Channel layout of the discretized matrix: every channel's value block in
// channel order (one column, or one-hot columns for categorical channels),
// followed by one mask column per channel.
class ChannelSchema {
 public:
  ChannelSchema() = default;
  explicit ChannelSchema(std::vector<ChannelSpec> channels);

  // The 17-channel, 76-column layout of the reference clinical benchmark.
  static ChannelSchema standard();
  static ChannelSchema load(const std::filesystem::path& schema_file,
                            const std::optional<std::filesystem::path>& normal_values_file = std::nullopt);
  void save(const std::filesystem::path& schema_file) const;
  void save_normal_values(const std::filesystem::path& normal_values_file) const;

  [[nodiscard]] const std::vector<ChannelSpec>& channels() const noexcept { return channels_; }
  [[nodiscard]] std::size_t size() const noexcept { return channels_.size(); }
  [[nodiscard]] const ChannelSpec& channel(std::size_t i) const { return channels_.at(i); }
  [[nodiscard]] std::optional<std::size_t> index_of(const std::string& name) const;

  [[nodiscard]] std::size_t total_width() const noexcept { return total_width_; }
  [[nodiscard]] std::size_t value_offset(std::size_t channel) const { return value_offsets_.at(channel); }
  [[nodiscard]] std::size_t mask_offset(std::size_t channel) const { return mask_begin_ + channel; }
  [[nodiscard]] std::size_t mask_begin() const noexcept { return mask_begin_; }
  // Columns holding continuous values (the z-normalized ones).
  [[nodiscard]] std::vector<std::size_t> continuous_columns() const;

 private:
  void layout();

  std::vector<ChannelSpec> channels_;
  std::vector<std::size_t> value_offsets_;
  std::size_t mask_begin_ = 0;
  std::size_t total_width_ = 0;
};

// Channel indices of the standard schema.
namespace channel {
inline constexpr std::size_t capillary_refill = 0;
inline constexpr std::size_t diastolic_bp = 1;
inline constexpr std::size_t fio2 = 2;
inline constexpr std::size_t gcs_eyes = 3;
inline constexpr std::size_t gcs_motor = 4;
inline constexpr std::size_t gcs_total = 5;
inline constexpr std::size_t gcs_verbal = 6;
inline constexpr std::size_t glucose = 7;
inline constexpr std::size_t heart_rate = 8;
inline constexpr std::size_t height = 9;
inline constexpr std::size_t mean_bp = 10;
inline constexpr std::size_t oxygen_saturation = 11;
inline constexpr std::size_t respiratory_rate = 12;
inline constexpr std::size_t systolic_bp = 13;
inline constexpr std::size_t temperature = 14;
inline constexpr std::size_t weight = 15;
inline constexpr std::size_t ph = 16;
inline constexpr std::size_t count = 17;
}  // namespace channel

}  // namespace dilbench
