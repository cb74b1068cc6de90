#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "dilbench/schema.hpp"

namespace dilbench {

inline constexpr std::size_t kChannelCount = 17;
inline constexpr std::size_t kPhenotypeCount = 25;

// Short condition names in the order used for label vectors.
std::span<const std::string_view> phenotype_names();

enum class ValueFamily { gaussian, lognormal };

// Per-episode centre = mean + between * u (u ~ N(0,1) per episode and
// channel); each reading adds within * N(0,1). Lognormal applies the same
// construction on the log scale with mean-preserving corrections.
// Categorical channels use the same model on their ordinal score.
struct ValueDistribution {
  ValueFamily family = ValueFamily::gaussian;
  double mean = 0.0;
  double between = 0.0;
  double within = 0.0;
};

struct RegionProfile {
  std::string name;
  // Expected recordings per stay-hour, per channel (standard schema order).
  std::array<double, kChannelCount> frequency{};
  std::array<ValueDistribution, kChannelCount> values{};
  std::array<double, kPhenotypeCount> phenotype_prevalence{};
  double ihm_prevalence = 0.0;
  double decomp_rate = 0.0;
  // Average remaining stay; informative only, the stay-length scale is
  // calibrated from decomp_rate.
  double rlos_mean = 0.0;
  std::size_t cohort_size = 0;
  // Mixes the label-generating weights from the reference concept (0) towards
  // the alternative concept (1).
  double shift = 0.0;
  double unknown_region_fraction = 0.0;
  double multi_episode_fraction = 0.05;

  void validate() const;

  static RegionProfile builtin(std::string_view name);
  static std::vector<std::string> builtin_names();
  static RegionProfile load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;
};

// Default concept shift applied to the built-in non-reference regions.
inline constexpr double kDefaultShift = 0.5;

struct Event {
  double hours = 0.0;
  std::uint16_t channel = 0;
  // Continuous reading, or label index for categorical channels.
  double value = 0.0;

  friend bool operator==(const Event&, const Event&) = default;
};

struct EpisodeRecord {
  std::string patient_id;
  int episode = 1;
  // Empty when the source hospital has no region label.
  std::string region;
  double age = 0.0;
  double los_hours = 0.0;
  std::vector<Event> events;  // sorted by (hours, channel)
  bool mortality = false;
  std::array<std::uint8_t, kPhenotypeCount> phenotypes{};
  std::optional<double> death_time;
  // False when hospital and unit discharge status disagree.
  bool label_consistent = true;

  [[nodiscard]] std::string stay_name() const;
  friend bool operator==(const EpisodeRecord&, const EpisodeRecord&) = default;
};

using Cohort = std::vector<EpisodeRecord>;

// Label-generating model shared by the generator and its calibration.
struct LabelModel {
  std::array<double, kChannelCount> mortality_weights{};
  double mortality_noise = 0.0;
  double mortality_threshold = 0.0;
  std::array<std::array<double, kChannelCount>, kPhenotypeCount> phenotype_weights{};
  double phenotype_noise = 0.0;
  std::array<double, kPhenotypeCount> phenotype_thresholds{};
  std::array<double, kChannelCount> stay_weights{};
  double stay_log_scale = 0.0;
  // Gamma(2, los_scale * exp(stay_log_scale * z)) stay length in hours.
  double los_scale = 0.0;

  static LabelModel for_profile(const RegionProfile& profile);
};

// Stay-length scale whose per-hour decompensation label rate matches
// profile.decomp_rate (Monte Carlo with a fixed internal seed).
double calibrate_los_scale(const RegionProfile& profile, const LabelModel& partial);

Cohort generate_cohort(const RegionProfile& profile, std::uint64_t seed, const ChannelSchema& schema);

// F_c = (1/n) sum_i count_ic / los_i for every schema channel.
std::vector<double> measurement_frequency(const Cohort& cohort, std::size_t channel_count = kChannelCount);

struct ChannelSummary {
  std::string channel;
  bool present = false;
  double mean = 0.0;
  double median = 0.0;
  double q1 = 0.0;
  double q3 = 0.0;
  double bin_low = 0.0;
  double bin_high = 0.0;
  std::vector<std::size_t> counts;
};

// Histogram of per-episode channel means. `ranges` fixes the histogram
// range per channel (e.g. shared across regions); otherwise the data range.
std::vector<ChannelSummary> distribution_summary(
    const Cohort& cohort, const ChannelSchema& schema, std::size_t bins = 20,
    const std::vector<std::optional<std::pair<double, double>>>& ranges = {});

// Per-episode mean reading of a channel (score for categorical channels).
std::optional<double> episode_channel_mean(const EpisodeRecord& episode, std::size_t channel,
                                           const ChannelSchema& schema);

// One <stay>.csv per episode plus listfile.csv.
void write_episodes(const Cohort& cohort, const std::filesystem::path& directory, const ChannelSchema& schema);
Cohort read_episodes(const std::filesystem::path& directory, const ChannelSchema& schema,
                     bool drop_unknown_region = true);

}  // namespace dilbench
