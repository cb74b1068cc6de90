#include "dilbench/cohort.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <sstream>

#include <boost/math/distributions/normal.hpp>

#include "dilbench/error.hpp"
#include "dilbench/kv.hpp"
#include "dilbench/rng.hpp"

namespace dilbench {

namespace {

constexpr std::array<std::string_view, kPhenotypeCount> kPhenotypeNames = {
    "AURF", "ACD", "AMI", "CD", "CKD", "COPD", "CS", "CoDi", "CHF", "CA", "DMC", "DM", "LD",
    "EH", "FD", "GH", "HWC", "OLD", "LR", "UR", "Pleurisy", "Pneumonia", "RF", "Septicemia", "Shock"};

// Built-in regions, in this column order for every table below.
constexpr std::array<std::string_view, 5> kRegions = {"MIMIC-III", "South", "Midwest", "West", "Northeast"};

// Recordings per stay-hour, standard channel order.
constexpr double kFrequency[kChannelCount][5] = {
    //  MIMIC-III South   Midwest West    Northeast
    {0.0025, 0.0237, 0, 0.0110, 0.1200},            // Capillary refill
    {1.0641, 0.9663, 1.1045, 1.4268, 1.0844},       // DBP
    {0.0597, 0.0227, 0.0207, 0.0219, 0.0144},       // FiO2
    {0.1143, 0.2287, 0.1091, 0.1051, 0.5027},       // GCS eyes
    {0.1238, 0.2286, 0.1088, 0.1050, 0.5026},       // GCS motor
    {0.1615, 0.2253, 0.1085, 0.1050, 0.5027},       // GCS total
    {0.1242, 0.2359, 0.1750, 0.1562, 0.5027},       // GCS verbal
    {0.2462, 0.1819, 0.2061, 0.1824, 0.2540},       // Glucose
    {1.1532, 1.1086, 1.2787, 1.5929, 1.0707},       // HR
    {0.0049, 0.0266, 0.0267, 0.0319, 0.0263},       // Height
    {1.0563, 0.9931, 1.0795, 1.3693, 1.0376},       // MAP
    {1.1260, 0.9953, 1.1963, 0.8140, 0.7383},       // O2 sat
    {1.1519, 1.0612, 1.1638, 1.2426, 1.0300},       // RR
    {1.0646, 0.0966, 1.1044, 1.4268, 1.0845},       // SBP
    {0.3198, 0.3092, 0.3366, 0.4444, 0.3391},       // Temperature
    {0.0427, 0.0269, 0.0255, 0.0323, 0.0263},       // Weight
    {0.0977, 0.0219, 0.0233, 0.0180, 0.0228},       // pH
};

constexpr double kPhenotypePrevalence[kPhenotypeCount][5] = {
    {0.2139, 0.1130, 0.1055, 0.0996, 0.1935},  // AURF
    {0.0735, 0.0705, 0.0705, 0.0823, 0.0647},  // ACD
    {0.1035, 0.0626, 0.0497, 0.0516, 0.0637},  // AMI
    {0.3212, 0.1300, 0.0988, 0.1138, 0.2483},  // CD
    {0.1338, 0.0952, 0.0901, 0.0777, 0.1081},  // CKD
    {0.1302, 0.0810, 0.0717, 0.0712, 0.1187},  // COPD
    {0.2075, 0.0086, 0.0075, 0.0094, 0.0141},  // CS
    {0.0719, 0.0097, 0.0074, 0.0063, 0.0127},  // CoDi
    {0.2678, 0.1070, 0.0739, 0.0869, 0.1219},  // CHF
    {0.3231, 0.0436, 0.0210, 0.0140, 0.0376},  // CA
    {0.0952, 0.0457, 0.0337, 0.0370, 0.0429},  // DMC
    {0.1927, 0.0070, 0.0031, 0.0020, 0.0108},  // DM
    {0.2902, 0.0603, 0.0075, 0.0306, 0.0792},  // LD
    {0.4194, 0.1854, 0.0770, 0.1587, 0.2011},  // EH
    {0.2686, 0.1196, 0.0828, 0.0968, 0.3463},  // FD
    {0.0732, 0.0586, 0.0511, 0.0573, 0.0743},  // GH
    {0.1324, 0.0181, 0.0091, 0.0121, 0.0164},  // HWC
    {0.0889, 0.0271, 0.0254, 0.0329, 0.0720},  // OLD
    {0.0517, 0.0273, 0.0224, 0.0212, 0.0445},  // LR
    {0.0406, 0.0047, 0.0047, 0.0050, 0.0077},  // UR
    {0.0873, 0.0282, 0.0200, 0.0251, 0.1221},  // Pleurisy
    {0.1388, 0.0915, 0.0948, 0.0912, 0.1709},  // Pneumonia
    {0.1806, 0.2109, 0.1743, 0.2182, 0.2958},  // RF
    {0.1426, 0.0920, 0.1110, 0.1702, 0.1529},  // Septicemia
    {0.0785, 0.0504, 0.0428, 0.0741, 0.1163},  // Shock
};

constexpr double kIhmPrevalence[5] = {0.1323, 0.1149, 0.0854, 0.1438, 0.1359};
constexpr double kDecompRate[5] = {0.0206, 0.0178, 0.0139, 0.0234, 0.0243};
constexpr double kRemainingLos[5] = {135.39, 106.247, 105.379, 167.528, 113.196};

// Synthetic value model (not taken from any table): gaussian centres and
// spreads per channel, with small regional offsets applied in builtin().
constexpr ValueDistribution kBaseValues[kChannelCount] = {
    {ValueFamily::gaussian, 0.1, 0.35, 0.3},    // Capillary refill (score)
    {ValueFamily::gaussian, 60.0, 10.0, 7.0},   // DBP
    {ValueFamily::gaussian, 0.50, 0.15, 0.08},  // FiO2 (reference shape)
    {ValueFamily::gaussian, 3.2, 0.9, 0.4},     // GCS eyes (score)
    {ValueFamily::gaussian, 5.0, 1.2, 0.5},     // GCS motor (score)
    {ValueFamily::gaussian, 12.0, 3.0, 1.0},    // GCS total (score)
    {ValueFamily::gaussian, 3.6, 1.4, 0.5},     // GCS verbal (score)
    {ValueFamily::gaussian, 135.0, 35.0, 25.0}, // Glucose
    {ValueFamily::gaussian, 86.0, 13.0, 7.0},   // HR
    {ValueFamily::gaussian, 170.0, 10.0, 0.0},  // Height
    {ValueFamily::gaussian, 78.0, 11.0, 8.0},   // MAP
    {ValueFamily::gaussian, 97.0, 2.0, 1.5},    // O2 sat
    {ValueFamily::gaussian, 19.0, 4.0, 3.0},    // RR
    {ValueFamily::gaussian, 120.0, 17.0, 12.0}, // SBP
    {ValueFamily::gaussian, 36.9, 0.5, 0.3},    // Temperature
    {ValueFamily::gaussian, 82.0, 18.0, 0.0},   // Weight
    {ValueFamily::gaussian, 7.37, 0.07, 0.05},  // pH (reference shape)
};
// Non-reference regions record FiO2 and pH with narrower, shifted shapes.
constexpr ValueDistribution kRegionalFio2 = {ValueFamily::lognormal, 0.33, 0.25, 0.10};
constexpr ValueDistribution kRegionalPh = {ValueFamily::gaussian, 7.38, 0.045, 0.03};
constexpr double kRegionalMeanOffset[5] = {0.0, 0.01, -0.01, 0.005, -0.005};

// ---------------------------------------------------------------------------
// Label-generating model. Each episode draws a latent u ~ N(0, I) with one
// coordinate per channel; the channel's readings are centred on
// mean + between * u_c, so labels are recoverable from the measurements.
//
//   mortality   = [w . u + 0.6 e > tau]
//   phenotype k = [a_k . u + 0.8 e_k > tau_k]
//   stay length = Gamma(2, scale * exp(0.35 * v . u / |v|))
//
// with w = (1 - shift) w_ref + shift w_alt (same mixing for a_k), and the
// thresholds tau placed at the normal quantile matching each prevalence.
constexpr double kMortalityRef[kChannelCount] = {
    0, 0, 0, 0, 0, -0.7, 0, 0.3, 0.8, 0, -0.6, -0.5, 0.6, 0, 0.4, 0, -0.4};
constexpr double kMortalityAlt[kChannelCount] = {
    0, 0.7, 0, 0, -0.4, -0.3, 0, -0.3, -0.5, 0, 0.4, 0, -0.4, -0.6, -0.4, 0, 0};
constexpr double kStayWeights[kChannelCount] = {
    0, 0, 0, 0, 0, -0.5, 0, 0, 0.3, 0, 0, -0.3, 0.3, 0, 0.2, 0, 0};
constexpr double kMortalityNoise = 0.6;
constexpr double kPhenotypeNoise = 0.8;
constexpr double kStayLogScale = 0.35;

// Channels that carry phenotype signal (frequently charted ones).
constexpr std::array<std::size_t, 13> kPhenotypeChannels = {1, 3, 4, 5, 6, 7, 8, 10, 11, 12, 13, 14, 16};

constexpr double kAgeMin = 16.0;
constexpr double kAgeMax = 90.0;
constexpr double kInconsistentLabelRate = 0.003;

std::size_t region_column(std::string_view name) {
  for (std::size_t i = 0; i < kRegions.size(); ++i) {
    if (kRegions[i] == name) return i;
  }
  std::string lowered(name);
  std::transform(lowered.begin(), lowered.end(), lowered.begin(), [](unsigned char c) { return std::tolower(c); });
  for (std::size_t i = 0; i < kRegions.size(); ++i) {
    std::string r(kRegions[i]);
    std::transform(r.begin(), r.end(), r.begin(), [](unsigned char c) { return std::tolower(c); });
    if (r == lowered || (i == 0 && (lowered == "mimic" || lowered == "mimic3" || lowered == "mimic-iii"))) return i;
  }
  throw Error(ErrorKind::InvalidProfile, "no built-in profile named " + std::string(name));
}

std::uint64_t name_hash(std::string_view s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (const unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

double norm2(const std::array<double, kChannelCount>& w) {
  return std::sqrt(std::inner_product(w.begin(), w.end(), w.begin(), 0.0));
}

double upper_quantile(double prevalence, double sd) {
  if (prevalence <= 0.0) return INFINITY;
  if (prevalence >= 1.0) return -INFINITY;
  const boost::math::normal_distribution<double> normal(0.0, sd);
  return boost::math::quantile(boost::math::complement(normal, prevalence));
}

std::string family_name(ValueFamily f) { return f == ValueFamily::gaussian ? "gaussian" : "lognormal"; }

// Per-hour decompensation label counts for a death at `death` within a stay
// of `los` hours: hours t = 5..floor(los), positive iff death in (t, t+24].
struct HourCounts {
  double positive = 0;
  double total = 0;
};

HourCounts decomp_hours(double los, std::optional<double> death) {
  HourCounts c;
  if (los < 5.0) return c;
  const double last = std::floor(los);
  c.total = last - 4.0;
  if (death) {
    // Integers t in [max(5, death - 24), min(last, ceil(death) - 1)].
    const double lo = std::max(5.0, std::ceil(*death - 24.0));
    const double hi = std::min(last, std::ceil(*death) - 1.0);
    c.positive = std::max(0.0, hi - lo + 1.0);
  }
  return c;
}

double sample_value(const ValueDistribution& d, double centre, double noise) {
  if (d.family == ValueFamily::lognormal) return centre * std::exp(d.within * noise - 0.5 * d.within * d.within);
  return centre + d.within * noise;
}

double episode_centre(const ValueDistribution& d, double u) {
  if (d.family == ValueFamily::lognormal) return d.mean * std::exp(d.between * u - 0.5 * d.between * d.between);
  return d.mean + d.between * u;
}

std::string patient_prefix(const std::string& region) {
  std::string p;
  for (const unsigned char c : region) {
    if (std::isalnum(c)) p.push_back(static_cast<char>(std::toupper(c)));
    if (p.size() == 3) break;
  }
  return p.empty() ? "P" : p;
}

}  // namespace

std::span<const std::string_view> phenotype_names() { return kPhenotypeNames; }

// ---------------------------------------------------------------------------
// Profiles

void RegionProfile::validate() const {
  auto bad = [&](const std::string& what) { throw Error(ErrorKind::InvalidProfile, name + ": " + what); };
  if (name.empty()) throw Error(ErrorKind::InvalidProfile, "profile without a name");
  for (std::size_t c = 0; c < kChannelCount; ++c) {
    if (!(frequency[c] >= 0.0) || !std::isfinite(frequency[c])) bad("negative frequency");
    const auto& v = values[c];
    if (!(v.between >= 0.0) || !(v.within >= 0.0)) bad("negative value spread");
    if (v.family == ValueFamily::lognormal && !(v.mean > 0.0)) bad("lognormal mean must be positive");
  }
  for (const double p : phenotype_prevalence) {
    if (!(p >= 0.0 && p <= 1.0)) bad("phenotype prevalence outside [0,1]");
  }
  if (!(ihm_prevalence >= 0.0 && ihm_prevalence <= 1.0)) bad("ihm prevalence outside [0,1]");
  if (!(decomp_rate > 0.0 && decomp_rate < 1.0)) bad("decompensation rate outside (0,1)");
  if (!(shift >= 0.0 && shift <= 1.0)) bad("shift outside [0,1]");
  if (!(unknown_region_fraction >= 0.0 && unknown_region_fraction < 1.0)) bad("unknown region fraction");
  if (!(multi_episode_fraction >= 0.0 && multi_episode_fraction <= 1.0)) bad("multi-episode fraction");
  if (cohort_size == 0) bad("cohort size must be positive");
}

std::vector<std::string> RegionProfile::builtin_names() { return {kRegions.begin(), kRegions.end()}; }

RegionProfile RegionProfile::builtin(std::string_view requested) {
  const std::size_t col = region_column(requested);
  RegionProfile p;
  p.name = std::string(kRegions[col]);
  for (std::size_t c = 0; c < kChannelCount; ++c) {
    p.frequency[c] = kFrequency[c][col];
    p.values[c] = kBaseValues[c];
  }
  const bool reference = col == 0;
  for (const std::size_t c : {channel::diastolic_bp, channel::glucose, channel::heart_rate, channel::height,
                              channel::mean_bp, channel::respiratory_rate, channel::systolic_bp, channel::weight}) {
    p.values[c].mean *= 1.0 + kRegionalMeanOffset[col];
  }
  if (!reference) {
    p.values[channel::fio2] = kRegionalFio2;
    p.values[channel::ph] = kRegionalPh;
  }
  for (std::size_t k = 0; k < kPhenotypeCount; ++k) p.phenotype_prevalence[k] = kPhenotypePrevalence[k][col];
  p.ihm_prevalence = kIhmPrevalence[col];
  p.decomp_rate = kDecompRate[col];
  p.rlos_mean = kRemainingLos[col];
  p.cohort_size = 4000;
  p.shift = reference ? 0.0 : kDefaultShift;
  return p;
}

RegionProfile RegionProfile::load(const std::filesystem::path& path) {
  const ChannelSchema schema = ChannelSchema::standard();
  RegionProfile p;
  std::array<bool, kChannelCount> have_freq{}, have_values{};
  std::array<bool, kPhenotypeCount> have_prev{};
  for (const auto& kv : read_key_values(path)) {
    const std::string where = path.string() + ":" + std::to_string(kv.line);
    auto channel_of = [&](const std::string& n) {
      const auto idx = schema.index_of(n);
      if (!idx) throw Error(ErrorKind::InvalidProfile, where + ": unknown channel " + n);
      return *idx;
    };
    const auto dot = kv.key.find('.');
    const std::string head = kv.key.substr(0, dot);
    const std::string tail = dot == std::string::npos ? "" : kv.key.substr(dot + 1);
    if (kv.key == "name") {
      p.name = kv.value;
    } else if (kv.key == "cohort_size") {
      p.cohort_size = static_cast<std::size_t>(parse_int(kv.value, where));
    } else if (kv.key == "shift") {
      p.shift = parse_double(kv.value, where);
    } else if (kv.key == "ihm_prevalence") {
      p.ihm_prevalence = parse_double(kv.value, where);
    } else if (kv.key == "decomp_rate") {
      p.decomp_rate = parse_double(kv.value, where);
    } else if (kv.key == "rlos_mean") {
      p.rlos_mean = parse_double(kv.value, where);
    } else if (kv.key == "unknown_region_fraction") {
      p.unknown_region_fraction = parse_double(kv.value, where);
    } else if (kv.key == "multi_episode_fraction") {
      p.multi_episode_fraction = parse_double(kv.value, where);
    } else if (head == "frequency") {
      const auto c = channel_of(tail);
      p.frequency[c] = parse_double(kv.value, where);
      have_freq[c] = true;
    } else if (head == "values") {
      const auto c = channel_of(tail);
      std::istringstream fields(kv.value);
      std::string family, mean, between, within, extra;
      if (!(fields >> family >> mean >> between >> within) || (fields >> extra)) {
        throw Error(ErrorKind::InvalidProfile, where + ": expected <family> <mean> <between> <within>");
      }
      if (family != "gaussian" && family != "lognormal") {
        throw Error(ErrorKind::InvalidProfile, where + ": unknown family " + family);
      }
      p.values[c] = ValueDistribution{family == "gaussian" ? ValueFamily::gaussian : ValueFamily::lognormal,
                                      parse_double(mean, where), parse_double(between, where),
                                      parse_double(within, where)};
      have_values[c] = true;
    } else if (head == "prevalence") {
      const auto it = std::find(kPhenotypeNames.begin(), kPhenotypeNames.end(), tail);
      if (it == kPhenotypeNames.end()) throw Error(ErrorKind::InvalidProfile, where + ": unknown phenotype " + tail);
      const auto k = static_cast<std::size_t>(it - kPhenotypeNames.begin());
      p.phenotype_prevalence[k] = parse_double(kv.value, where);
      have_prev[k] = true;
    } else {
      throw Error(ErrorKind::InvalidProfile, where + ": unknown key " + kv.key);
    }
  }
  for (std::size_t c = 0; c < kChannelCount; ++c) {
    if (!have_freq[c] || !have_values[c]) {
      throw Error(ErrorKind::InvalidProfile, path.string() + ": missing frequency/values for " + schema.channel(c).name);
    }
  }
  for (std::size_t k = 0; k < kPhenotypeCount; ++k) {
    if (!have_prev[k]) {
      throw Error(ErrorKind::InvalidProfile, path.string() + ": missing prevalence." + std::string(kPhenotypeNames[k]));
    }
  }
  p.validate();
  return p;
}

void RegionProfile::save(const std::filesystem::path& path) const {
  const ChannelSchema schema = ChannelSchema::standard();
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::IoFailure, "cannot write " + path.string());
  out << "# Region profile for the synthetic cohort generator.\n"
      << "# values.<channel> = <gaussian|lognormal> <mean> <between-episode sd> <within-episode sd>\n"
      << "name = " << name << '\n'
      << "cohort_size = " << cohort_size << '\n'
      << "shift = " << format_double(shift) << '\n'
      << "ihm_prevalence = " << format_double(ihm_prevalence) << '\n'
      << "decomp_rate = " << format_double(decomp_rate) << '\n'
      << "rlos_mean = " << format_double(rlos_mean) << '\n'
      << "unknown_region_fraction = " << format_double(unknown_region_fraction) << '\n'
      << "multi_episode_fraction = " << format_double(multi_episode_fraction) << '\n';
  for (std::size_t c = 0; c < kChannelCount; ++c) {
    out << "frequency." << schema.channel(c).name << " = " << format_double(frequency[c]) << '\n';
  }
  for (std::size_t c = 0; c < kChannelCount; ++c) {
    const auto& v = values[c];
    out << "values." << schema.channel(c).name << " = " << family_name(v.family) << ' ' << format_double(v.mean)
        << ' ' << format_double(v.between) << ' ' << format_double(v.within) << '\n';
  }
  for (std::size_t k = 0; k < kPhenotypeCount; ++k) {
    out << "prevalence." << kPhenotypeNames[k] << " = " << format_double(phenotype_prevalence[k]) << '\n';
  }
}

// ---------------------------------------------------------------------------
// Label model

LabelModel LabelModel::for_profile(const RegionProfile& profile) {
  profile.validate();
  LabelModel m;
  const double s = profile.shift;
  for (std::size_t c = 0; c < kChannelCount; ++c) {
    m.mortality_weights[c] = (1.0 - s) * kMortalityRef[c] + s * kMortalityAlt[c];
    m.stay_weights[c] = kStayWeights[c];
  }
  m.mortality_noise = kMortalityNoise;
  m.mortality_threshold = upper_quantile(
      profile.ihm_prevalence, std::hypot(norm2(m.mortality_weights), m.mortality_noise));
  m.phenotype_noise = kPhenotypeNoise;
  for (std::size_t k = 0; k < kPhenotypeCount; ++k) {
    auto& a = m.phenotype_weights[k];
    a.fill(0.0);
    for (const std::size_t c : kPhenotypeChannels) {
      const double ref = 0.8 * std::sin(2.3 * static_cast<double>(k + 1) + 1.7 * static_cast<double>(c));
      const double alt = 0.8 * std::cos(1.9 * static_cast<double>(k + 1) + 2.9 * static_cast<double>(c));
      a[c] = (1.0 - s) * ref + s * alt;
    }
    m.phenotype_thresholds[k] =
        upper_quantile(profile.phenotype_prevalence[k], std::hypot(norm2(a), m.phenotype_noise));
  }
  m.stay_log_scale = kStayLogScale;
  m.los_scale = calibrate_los_scale(profile, m);
  return m;
}

double calibrate_los_scale(const RegionProfile& profile, const LabelModel& partial) {
  constexpr std::size_t kDraws = 40000;
  Rng rng(derive_seed(0x5eed, {name_hash("los-calibration")}));
  std::normal_distribution<double> normal;
  std::gamma_distribution<double> gamma(2.0, 1.0);
  const double stay_norm = norm2(partial.stay_weights);
  std::vector<double> base(kDraws);
  std::vector<char> died(kDraws);
  for (std::size_t i = 0; i < kDraws; ++i) {
    double score = 0.0, z = 0.0;
    for (std::size_t c = 0; c < kChannelCount; ++c) {
      const double u = normal(rng);
      score += partial.mortality_weights[c] * u;
      z += partial.stay_weights[c] * u;
    }
    score += partial.mortality_noise * normal(rng);
    died[i] = score > partial.mortality_threshold;
    base[i] = std::exp(partial.stay_log_scale * z / stay_norm) * gamma(rng);
  }
  auto rate = [&](double scale) {
    double pos = 0.0, total = 0.0;
    for (std::size_t i = 0; i < kDraws; ++i) {
      const double los = scale * base[i];
      const auto c = decomp_hours(los, died[i] ? std::optional<double>(los) : std::nullopt);
      pos += c.positive;
      total += c.total;
    }
    return total > 0 ? pos / total : 0.0;
  };
  // The rate falls as stays lengthen; bisect on the log scale.
  double lo = std::log(2.0), hi = std::log(5000.0);
  for (int iter = 0; iter < 60; ++iter) {
    const double mid = 0.5 * (lo + hi);
    if (rate(std::exp(mid)) > profile.decomp_rate) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  return std::exp(0.5 * (lo + hi));
}

// ---------------------------------------------------------------------------
// Generation

std::string EpisodeRecord::stay_name() const {
  return patient_id + "_episode" + std::to_string(episode) + "_timeseries.csv";
}

Cohort generate_cohort(const RegionProfile& profile, std::uint64_t seed, const ChannelSchema& schema) {
  profile.validate();
  if (schema.size() != kChannelCount) {
    throw Error(ErrorKind::SchemaMismatch, "generator needs the 17-channel schema");
  }
  const LabelModel model = LabelModel::for_profile(profile);
  const double stay_norm = norm2(model.stay_weights);
  const std::uint64_t region_stream = name_hash(profile.name);
  const std::string prefix = patient_prefix(profile.name);

  Cohort cohort;
  cohort.reserve(profile.cohort_size);
  for (std::size_t k = 0; cohort.size() < profile.cohort_size; ++k) {
    Rng rng(derive_seed(seed, {region_stream, k}));
    std::normal_distribution<double> normal;
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::gamma_distribution<double> gamma(2.0, 1.0);

    char id[32];
    std::snprintf(id, sizeof(id), "%s%06zu", prefix.c_str(), k);
    const int episodes = unit(rng) < profile.multi_episode_fraction ? 2 : 1;
    const bool unknown_region = unit(rng) < profile.unknown_region_fraction;
    const double age = kAgeMin + (kAgeMax - kAgeMin) * unit(rng);

    for (int e = 1; e <= episodes && cohort.size() < profile.cohort_size; ++e) {
      EpisodeRecord ep;
      ep.patient_id = id;
      ep.episode = e;
      ep.region = unknown_region ? std::string() : profile.name;
      ep.age = age;
      ep.label_consistent = unit(rng) >= kInconsistentLabelRate;

      std::array<double, kChannelCount> u{};
      for (auto& x : u) x = normal(rng);
      const double z = std::inner_product(u.begin(), u.end(), model.stay_weights.begin(), 0.0) / stay_norm;
      ep.los_hours = model.los_scale * std::exp(model.stay_log_scale * z) * gamma(rng);

      const double score = std::inner_product(u.begin(), u.end(), model.mortality_weights.begin(), 0.0) +
                           model.mortality_noise * normal(rng);
      ep.mortality = score > model.mortality_threshold;
      if (ep.mortality) ep.death_time = ep.los_hours;
      for (std::size_t p = 0; p < kPhenotypeCount; ++p) {
        const double s = std::inner_product(u.begin(), u.end(), model.phenotype_weights[p].begin(), 0.0) +
                         model.phenotype_noise * normal(rng);
        ep.phenotypes[p] = s > model.phenotype_thresholds[p] ? 1 : 0;
      }

      for (std::size_t c = 0; c < kChannelCount; ++c) {
        const double rate = profile.frequency[c] * ep.los_hours;
        if (!(rate > 0.0)) continue;
        const int count = std::poisson_distribution<int>(rate)(rng);
        const auto& dist = profile.values[c];
        const double centre = episode_centre(dist, u[c]);
        const auto& spec = schema.channel(c);
        // Admission height and weight are charted once at time zero.
        const bool admission_only = c == channel::height || c == channel::weight;
        for (int i = 0; i < count; ++i) {
          Event ev;
          ev.channel = static_cast<std::uint16_t>(c);
          ev.hours = admission_only ? 0.0 : ep.los_hours * unit(rng);
          const double reading = admission_only ? centre : sample_value(dist, centre, normal(rng));
          ev.value = spec.kind == ChannelKind::categorical ? static_cast<double>(spec.label_for_score(reading))
                                                           : reading;
          ep.events.push_back(ev);
        }
      }
      std::stable_sort(ep.events.begin(), ep.events.end(), [](const Event& a, const Event& b) {
        return a.hours != b.hours ? a.hours < b.hours : a.channel < b.channel;
      });
      cohort.push_back(std::move(ep));
    }
  }
  return cohort;
}

// ---------------------------------------------------------------------------
// Analysis

std::vector<double> measurement_frequency(const Cohort& cohort, std::size_t channel_count) {
  if (cohort.empty()) throw Error(ErrorKind::EmptyCohort, "frequency of an empty cohort");
  std::vector<double> freq(channel_count, 0.0);
  std::vector<std::size_t> counts(channel_count);
  for (const auto& ep : cohort) {
    if (!(ep.los_hours > 0.0)) {
      throw Error(ErrorKind::DomainError, ep.stay_name() + " has non-positive length of stay");
    }
    std::fill(counts.begin(), counts.end(), 0);
    for (const auto& ev : ep.events) {
      if (ev.channel < channel_count) ++counts[ev.channel];
    }
    for (std::size_t c = 0; c < channel_count; ++c) freq[c] += static_cast<double>(counts[c]) / ep.los_hours;
  }
  for (auto& f : freq) f /= static_cast<double>(cohort.size());
  return freq;
}

std::optional<double> episode_channel_mean(const EpisodeRecord& episode, std::size_t channel,
                                           const ChannelSchema& schema) {
  const auto& spec = schema.channel(channel);
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& ev : episode.events) {
    if (ev.channel != channel) continue;
    sum += spec.kind == ChannelKind::categorical ? spec.label_scores.at(static_cast<std::size_t>(ev.value)) : ev.value;
    ++n;
  }
  if (n == 0) return std::nullopt;
  return sum / static_cast<double>(n);
}

namespace {

double quantile_sorted(const std::vector<double>& v, double q) {
  const double pos = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

}  // namespace

std::vector<ChannelSummary> distribution_summary(const Cohort& cohort, const ChannelSchema& schema,
                                                 std::size_t bins,
                                                 const std::vector<std::optional<std::pair<double, double>>>& ranges) {
  if (cohort.empty()) throw Error(ErrorKind::EmptyCohort, "distribution of an empty cohort");
  if (bins == 0) bins = 1;
  std::vector<ChannelSummary> out;
  for (std::size_t c = 0; c < schema.size(); ++c) {
    ChannelSummary s;
    s.channel = schema.channel(c).name;
    std::vector<double> means;
    for (const auto& ep : cohort) {
      if (const auto m = episode_channel_mean(ep, c, schema)) means.push_back(*m);
    }
    s.counts.assign(bins, 0);
    if (!means.empty()) {
      s.present = true;
      std::sort(means.begin(), means.end());
      s.mean = std::accumulate(means.begin(), means.end(), 0.0) / static_cast<double>(means.size());
      s.median = quantile_sorted(means, 0.5);
      s.q1 = quantile_sorted(means, 0.25);
      s.q3 = quantile_sorted(means, 0.75);
      if (c < ranges.size() && ranges[c]) {
        s.bin_low = ranges[c]->first;
        s.bin_high = ranges[c]->second;
      } else {
        s.bin_low = means.front();
        s.bin_high = means.back();
      }
      const double width = (s.bin_high - s.bin_low) / static_cast<double>(bins);
      for (const double m : means) {
        std::size_t b = 0;
        if (width > 0) {
          const double pos = std::floor((m - s.bin_low) / width);
          b = static_cast<std::size_t>(std::clamp(pos, 0.0, static_cast<double>(bins - 1)));
        }
        ++s.counts[b];
      }
    }
    out.push_back(std::move(s));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Episode files

namespace {

// Split-channel spellings folded into the schema channel on ingestion.
const std::map<std::string, std::string>& column_aliases() {
  static const std::map<std::string, std::string> aliases = {
      {"Invasive mean blood pressure", "Mean blood pressure"},
      {"Non-invasive mean blood pressure", "Mean blood pressure"},
      {"MAP", "Mean blood pressure"},
      {"Invasive systolic blood pressure", "Systolic blood pressure"},
      {"Non-invasive systolic blood pressure", "Systolic blood pressure"},
      {"Invasive diastolic blood pressure", "Diastolic blood pressure"},
      {"Non-invasive diastolic blood pressure", "Diastolic blood pressure"},
  };
  return aliases;
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::string l = line;
  if (!l.empty() && l.back() == '\r') l.pop_back();
  return split(l, ',');
}

std::string read_file_lines_error(const std::filesystem::path& p, std::size_t line) {
  return p.string() + ":" + std::to_string(line);
}

}  // namespace

void write_episodes(const Cohort& cohort, const std::filesystem::path& directory, const ChannelSchema& schema) {
  std::error_code ec;
  std::filesystem::create_directories(directory, ec);
  if (ec) throw Error(ErrorKind::IoFailure, "cannot create " + directory.string() + ": " + ec.message());

  std::ofstream list(directory / "listfile.csv");
  if (!list) throw Error(ErrorKind::IoFailure, "cannot write " + (directory / "listfile.csv").string());
  list << "stay,region,period_length,y_true_mortality";
  for (const auto name : kPhenotypeNames) list << ",y_true_" << name;
  list << ",death_time,age,patient_id,episode,label_consistent\n";

  for (const auto& ep : cohort) {
    const auto path = directory / ep.stay_name();
    std::ofstream out(path);
    if (!out) throw Error(ErrorKind::IoFailure, "cannot write " + path.string());
    out << "Hours";
    for (const auto& c : schema.channels()) out << ',' << c.name;
    out << '\n';

    std::size_t i = 0;
    std::vector<std::string> cells(schema.size());
    while (i < ep.events.size()) {
      const double t = ep.events[i].hours;
      std::fill(cells.begin(), cells.end(), std::string());
      std::vector<bool> used(schema.size(), false);
      // Pack events at this timestamp into one row until a channel repeats.
      while (i < ep.events.size() && ep.events[i].hours == t && !used.at(ep.events[i].channel)) {
        const auto& ev = ep.events[i];
        const auto& spec = schema.channel(ev.channel);
        cells[ev.channel] = spec.kind == ChannelKind::categorical
                                ? spec.labels.at(static_cast<std::size_t>(ev.value))
                                : format_double(ev.value);
        used[ev.channel] = true;
        ++i;
      }
      out << format_double(t);
      for (const auto& cell : cells) out << ',' << cell;
      out << '\n';
    }
    if (!out) throw Error(ErrorKind::IoFailure, "short write to " + path.string());

    list << ep.stay_name() << ',' << ep.region << ',' << format_double(ep.los_hours) << ','
         << (ep.mortality ? 1 : 0);
    for (const auto f : ep.phenotypes) list << ',' << static_cast<int>(f);
    list << ',' << (ep.death_time ? format_double(*ep.death_time) : std::string()) << ',' << format_double(ep.age)
         << ',' << ep.patient_id << ',' << ep.episode << ',' << (ep.label_consistent ? 1 : 0) << '\n';
  }
  if (!list) throw Error(ErrorKind::IoFailure, "short write to listfile");
}

Cohort read_episodes(const std::filesystem::path& directory, const ChannelSchema& schema, bool drop_unknown_region) {
  const auto list_path = directory / "listfile.csv";
  std::ifstream list(list_path);
  if (!list) throw Error(ErrorKind::IoFailure, "cannot read " + list_path.string());

  std::string line;
  if (!std::getline(list, line)) throw Error(ErrorKind::MalformedFile, list_path.string() + ": empty listfile");
  const auto header = split_csv_line(line);
  const std::size_t expected = 4 + kPhenotypeCount + 5;
  if (header.size() != expected || header[0] != "stay" || header[1] != "region" || header[2] != "period_length" ||
      header[3] != "y_true_mortality") {
    throw Error(ErrorKind::MalformedFile, read_file_lines_error(list_path, 1) + ": unexpected listfile header");
  }

  Cohort cohort;
  std::size_t line_no = 1;
  while (std::getline(list, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const std::string where = read_file_lines_error(list_path, line_no);
    const auto f = split_csv_line(line);
    if (f.size() != expected) throw Error(ErrorKind::MalformedFile, where + ": expected " + std::to_string(expected) + " fields");
    EpisodeRecord ep;
    ep.region = f[1];
    ep.los_hours = parse_double(f[2], where);
    ep.mortality = parse_int(f[3], where) != 0;
    for (std::size_t k = 0; k < kPhenotypeCount; ++k) ep.phenotypes[k] = parse_int(f[4 + k], where) != 0 ? 1 : 0;
    std::size_t pos = 4 + kPhenotypeCount;
    if (!f[pos].empty()) ep.death_time = parse_double(f[pos], where);
    ep.age = parse_double(f[pos + 1], where);
    ep.patient_id = f[pos + 2];
    ep.episode = static_cast<int>(parse_int(f[pos + 3], where));
    ep.label_consistent = parse_int(f[pos + 4], where) != 0;
    if (ep.stay_name() != f[0]) {
      throw Error(ErrorKind::MalformedFile, where + ": stay " + f[0] + " does not match patient/episode columns");
    }
    if (drop_unknown_region && ep.region.empty()) continue;

    const auto path = directory / f[0];
    std::ifstream in(path);
    if (!in) throw Error(ErrorKind::IoFailure, "cannot read " + path.string());
    std::string row;
    if (!std::getline(in, row)) throw Error(ErrorKind::MalformedFile, path.string() + ": empty episode file");
    const auto cols = split_csv_line(row);
    if (cols.empty() || cols[0] != "Hours") {
      throw Error(ErrorKind::MalformedFile, read_file_lines_error(path, 1) + ": first column must be Hours");
    }
    std::vector<std::size_t> column_channel(cols.size(), 0);
    for (std::size_t j = 1; j < cols.size(); ++j) {
      std::string name = cols[j];
      if (const auto it = column_aliases().find(name); it != column_aliases().end()) name = it->second;
      const auto idx = schema.index_of(name);
      if (!idx) {
        throw Error(ErrorKind::MalformedFile, read_file_lines_error(path, 1) + ": unknown channel column '" + cols[j] + "'");
      }
      column_channel[j] = *idx;
    }
    std::size_t row_no = 1;
    while (std::getline(in, row)) {
      ++row_no;
      if (trim(row).empty()) continue;
      const std::string rwhere = read_file_lines_error(path, row_no);
      const auto cells = split_csv_line(row);
      if (cells.size() != cols.size()) throw Error(ErrorKind::MalformedFile, rwhere + ": wrong number of cells");
      const double t = parse_double(cells[0], rwhere);
      for (std::size_t j = 1; j < cells.size(); ++j) {
        if (cells[j].empty()) continue;
        const auto& spec = schema.channel(column_channel[j]);
        Event ev;
        ev.hours = t;
        ev.channel = static_cast<std::uint16_t>(column_channel[j]);
        if (spec.kind == ChannelKind::categorical) {
          const auto label = spec.label_index(cells[j]);
          if (!label) throw Error(ErrorKind::MalformedFile, rwhere + ": unknown label '" + cells[j] + "' for " + spec.name);
          ev.value = static_cast<double>(*label);
        } else {
          ev.value = parse_double(cells[j], rwhere);
        }
        ep.events.push_back(ev);
      }
    }
    std::stable_sort(ep.events.begin(), ep.events.end(), [](const Event& a, const Event& b) {
      return a.hours != b.hours ? a.hours < b.hours : a.channel < b.channel;
    });
    cohort.push_back(std::move(ep));
  }
  return cohort;
}

}  // namespace dilbench
