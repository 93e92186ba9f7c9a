#include "densecount/evaluator.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "binary_io.hpp"
#include "densecount/errors.hpp"
#include "densecount/trainer.hpp"

namespace densecount {

namespace {

std::string shortest(double v) {
  char buf[64];
  const auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, end);
}

std::vector<double> sorted_terms(std::span<const double> errors, bool squared) {
  if (errors.empty()) throw EmptyDatasetError();
  std::vector<double> terms;
  terms.reserve(errors.size());
  for (double e : errors) terms.push_back(squared ? e * e : std::abs(e));
  std::sort(terms.begin(), terms.end());
  return terms;
}

double sum(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s;
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

}  // namespace

double mae(std::span<const double> errors) {
  const auto terms = sorted_terms(errors, false);
  return sum(terms) / static_cast<double>(terms.size());
}

double mse(std::span<const double> errors) {
  const auto terms = sorted_terms(errors, true);
  return std::sqrt(sum(terms) / static_cast<double>(terms.size()));
}

EvalReport make_report(std::vector<ImageResult> rows, std::vector<std::string> failures) {
  if (rows.empty()) throw EmptyDatasetError();
  std::vector<double> errors;
  errors.reserve(rows.size());
  for (const auto& r : rows) errors.push_back(r.gt_count - r.est_count);
  EvalReport report;
  report.mae = mae(errors);
  report.mse = mse(errors);
  report.rows = std::move(rows);
  report.failures = std::move(failures);
  return report;
}

EvalReport evaluate(const Network<float>& model, const SampleSource& dataset) {
  std::vector<ImageResult> rows;
  std::vector<std::string> failures;
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    Sample sample;
    try {
      sample = dataset.load(i);
    } catch (const DataError& e) {
      failures.push_back(dataset.id(i) + ": " + e.what());
      continue;
    }
    const double gt = static_cast<double>(sample.annotations.count());
    const double est = infer_count(model, sample.image);
    rows.push_back({dataset.id(i), gt, est, std::abs(gt - est)});
  }
  return make_report(std::move(rows), std::move(failures));
}

std::string report_to_csv(const EvalReport& report) {
  std::ostringstream out;
  out << "image,gt_count,est_count,abs_err\n";
  for (const auto& r : report.rows) {
    out << csv_field(r.image) << ',' << shortest(r.gt_count) << ',' << shortest(r.est_count) << ','
        << shortest(r.abs_err) << '\n';
  }
  out << '\n';
  out << "images," << report.rows.size() << '\n';
  out << "failed," << report.failures.size() << '\n';
  out << "mae," << shortest(report.mae) << '\n';
  out << "mse," << shortest(report.mse) << '\n';
  out << "reference_mae," << shortest(kReferenceMae) << '\n';
  out << "reference_mse," << shortest(kReferenceMse) << '\n';
  return out.str();
}

void write_report_csv(const EvalReport& report, const std::filesystem::path& path) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw DataError("cannot write " + path.string());
  f << report_to_csv(report);
  if (!f) throw DataError("error writing " + path.string());
}

DensityMap tensor_to_density(const Tensor<float>& output, double scale) {
  const auto& s = output.shape();
  if (s.size() != 4 || s[0] != 1 || s[1] != 1) {
    throw ContractViolation("density output must be [1, 1, H, W], got " + shape_to_string(s));
  }
  DensityMap map;
  map.height = static_cast<int>(s[2]);
  map.width = static_cast<int>(s[3]);
  map.scale = scale;
  const auto data = output.data();
  map.values.assign(data.begin(), data.end());
  return map;
}

void write_density_raw(const DensityMap& map, const std::filesystem::path& path) {
  if (map.values.size() != static_cast<std::size_t>(map.height) * map.width) {
    throw ContractViolation("density map holds " + std::to_string(map.values.size()) + " values for " +
                            std::to_string(map.height) + "x" + std::to_string(map.width));
  }
  std::string bytes = "DMAP";
  detail::put_u32(bytes, static_cast<std::uint32_t>(map.height));
  detail::put_u32(bytes, static_cast<std::uint32_t>(map.width));
  std::vector<float> values(map.values.begin(), map.values.end());
  detail::put_f32(bytes, values);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw FormatError(FormatErrorCode::kIo, "cannot write " + path.string());
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw FormatError(FormatErrorCode::kIo, "error writing " + path.string());
}

DensityMap read_density_raw(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw FormatError(FormatErrorCode::kIo, "cannot open " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  if (bytes.size() < 12) throw FormatError(FormatErrorCode::kTruncatedHeader, path.string() + " is shorter than the header");
  if (bytes.compare(0, 4, "DMAP") != 0) throw FormatError(FormatErrorCode::kBadMagic, path.string() + " is not a DMAP file");
  DensityMap map;
  const auto* raw = reinterpret_cast<const unsigned char*>(bytes.data());
  map.height = static_cast<int>(detail::get_u32(raw + 4));
  map.width = static_cast<int>(detail::get_u32(raw + 8));
  const std::size_t n = static_cast<std::size_t>(map.height) * static_cast<std::size_t>(map.width);
  if (bytes.size() != 12 + 4 * n) {
    throw FormatError(FormatErrorCode::kPayloadLength, path.string() + ": expected " + std::to_string(4 * n) +
                                                           " payload bytes, found " + std::to_string(bytes.size() - 12));
  }
  const auto values = detail::get_f32(raw + 12, n);
  map.values.assign(values.begin(), values.end());
  return map;
}

std::vector<std::uint8_t> density_to_gray(const DensityMap& map) {
  std::vector<std::uint8_t> gray(map.values.size(), 0);
  double peak = 0.0;
  for (double v : map.values) peak = std::max(peak, v);
  if (!(peak > 0.0)) return gray;
  for (std::size_t i = 0; i < gray.size(); ++i) {
    const double v = map.values[i];
    if (v > 0.0) gray[i] = static_cast<std::uint8_t>(std::min(255.0, std::floor(v / peak * 255.0)));
  }
  return gray;
}

void write_density_pgm(const DensityMap& map, const std::filesystem::path& path) {
  const auto gray = density_to_gray(map);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw DataError("cannot write " + path.string());
  f << "P5\n" << map.width << ' ' << map.height << "\n255\n";
  f.write(reinterpret_cast<const char*>(gray.data()), static_cast<std::streamsize>(gray.size()));
  if (!f) throw DataError("error writing " + path.string());
}

void export_density(const DensityMap& map, const std::filesystem::path& base) {
  auto with_ext = [&](const char* ext) { return std::filesystem::path(base.string() + ext); };
  write_density_raw(map, with_ext(".dmap"));
  write_density_pgm(map, with_ext(".pgm"));
}

}  // namespace densecount
