#include "sponge/datasets.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numeric>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "sponge/errors.hpp"
#include "sponge/random.hpp"

namespace sponge {

void to_json(nlohmann::json& j, const Manifest& m) {
  j = {{"name", m.name},
       {"sample_shape", m.sample_shape},
       {"dynamic_range", m.dynamic_range},
       {"splits", m.splits},
       {"seed", m.seed}};
}

void from_json(const nlohmann::json& j, Manifest& m) {
  m.name = j.at("name").get<std::string>();
  m.sample_shape = j.at("sample_shape").get<Shape>();
  m.dynamic_range = j.at("dynamic_range").get<double>();
  m.splits = j.at("splits").get<std::map<std::string, std::size_t>>();
  m.seed = j.at("seed").get<std::uint64_t>();
}

Dataset::Dataset(Tensor s, std::optional<std::vector<int>> l, Manifest m)
    : samples(std::move(s)), labels(std::move(l)), manifest(std::move(m)) {
  if (labels && labels->size() != size()) {
    throw DimensionError("dataset has " + std::to_string(size()) + " samples but " + std::to_string(labels->size()) +
                         " labels");
  }
  if (!samples.empty()) manifest.sample_shape = Shape(samples.shape().begin() + 1, samples.shape().end());
}

const std::vector<int>& Dataset::label_vector() const {
  if (!labels) throw ConfigError("dataset '" + manifest.name + "' has no labels");
  return *labels;
}

std::span<const int> Dataset::label_rows(std::size_t begin, std::size_t end) const {
  const auto& l = label_vector();
  return std::span<const int>(l).subspan(begin, end - begin);
}

namespace {

std::vector<unsigned char> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint32_t read_be32(const std::vector<unsigned char>& bytes, std::size_t offset, const std::filesystem::path& path) {
  if (offset + 4 > bytes.size()) {
    throw LoadError(path.string() + ": truncated header at byte offset " + std::to_string(offset));
  }
  return (std::uint32_t(bytes[offset]) << 24) | (std::uint32_t(bytes[offset + 1]) << 16) |
         (std::uint32_t(bytes[offset + 2]) << 8) | std::uint32_t(bytes[offset + 3]);
}

void write_be32(std::ofstream& out, std::uint32_t v) {
  const char b[4] = {char((v >> 24) & 0xff), char((v >> 16) & 0xff), char((v >> 8) & 0xff), char(v & 0xff)};
  out.write(b, 4);
}

std::string hex(std::uint32_t v) {
  std::ostringstream os;
  os << "0x" << std::hex << v;
  return os.str();
}

constexpr std::uint32_t kImageMagic = 0x00000803;
constexpr std::uint32_t kLabelMagic = 0x00000801;

}  // namespace

Dataset load_idx(const std::filesystem::path& images, const std::optional<std::filesystem::path>& labels) {
  const auto bytes = read_file(images);
  const auto magic = read_be32(bytes, 0, images);
  if (magic != kImageMagic) {
    throw LoadError(images.string() + ": bad magic " + hex(magic) + " at byte offset 0 (expected 0x803)");
  }
  const std::size_t count = read_be32(bytes, 4, images);
  const std::size_t rows = read_be32(bytes, 8, images);
  const std::size_t cols = read_be32(bytes, 12, images);
  if (count == 0 || rows == 0 || cols == 0) throw LoadError(images.string() + ": empty image set declared at byte offset 4");
  const std::size_t need = count * rows * cols;
  if (bytes.size() - 16 < need) {
    throw LoadError(images.string() + ": truncated pixel data at byte offset " + std::to_string(bytes.size()) +
                    ", expected " + std::to_string(16 + need) + " bytes");
  }
  std::vector<float> data(need);
  for (std::size_t i = 0; i < need; ++i) data[i] = float(bytes[16 + i]) / 255.0f;

  std::optional<std::vector<int>> label_vec;
  if (labels) {
    const auto lb = read_file(*labels);
    const auto lmagic = read_be32(lb, 0, *labels);
    if (lmagic != kLabelMagic) {
      throw LoadError(labels->string() + ": bad magic " + hex(lmagic) + " at byte offset 0 (expected 0x801)");
    }
    const std::size_t lcount = read_be32(lb, 4, *labels);
    if (lcount != count) {
      throw LoadError(labels->string() + ": label count " + std::to_string(lcount) + " at byte offset 4 does not match " +
                      std::to_string(count) + " images");
    }
    if (lb.size() - 8 < lcount) {
      throw LoadError(labels->string() + ": truncated label data at byte offset " + std::to_string(lb.size()));
    }
    label_vec.emplace(lb.begin() + 8, lb.begin() + 8 + static_cast<std::ptrdiff_t>(lcount));
  }
  Manifest m;
  m.name = images.stem().string();
  m.dynamic_range = 1.0;
  m.splits["all"] = count;
  return Dataset(Tensor({count, 1, rows, cols}, std::move(data)), std::move(label_vec), std::move(m));
}

void write_idx_images(const std::filesystem::path& path, const std::vector<std::vector<std::uint8_t>>& images,
                      std::uint32_t rows, std::uint32_t cols) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ConfigError("cannot write " + path.string());
  write_be32(out, kImageMagic);
  write_be32(out, static_cast<std::uint32_t>(images.size()));
  write_be32(out, rows);
  write_be32(out, cols);
  for (const auto& img : images) {
    if (img.size() != std::size_t(rows) * cols) throw DimensionError("IDX image has wrong pixel count");
    out.write(reinterpret_cast<const char*>(img.data()), static_cast<std::streamsize>(img.size()));
  }
}

void write_idx_labels(const std::filesystem::path& path, const std::vector<std::uint8_t>& labels) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ConfigError("cannot write " + path.string());
  write_be32(out, kLabelMagic);
  write_be32(out, static_cast<std::uint32_t>(labels.size()));
  out.write(reinterpret_cast<const char*>(labels.data()), static_cast<std::streamsize>(labels.size()));
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream is(line);
  while (std::getline(is, cell, ',')) {
    while (!cell.empty() && (cell.back() == '\r' || cell.back() == ' ')) cell.pop_back();
    while (!cell.empty() && cell.front() == ' ') cell.erase(cell.begin());
    out.push_back(cell);
  }
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

}  // namespace

Dataset load_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw LoadError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw LoadError(path.string() + ": missing header row");
  const auto header = split_csv_line(line);
  std::optional<std::size_t> label_col;
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (header[i] == "label") label_col = i;
  }
  const std::size_t features = header.size() - (label_col ? 1 : 0);
  if (features == 0) throw LoadError(path.string() + ": no feature columns");
  std::vector<float> data;
  std::vector<int> labels;
  std::size_t rows = 0, line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    const auto cells = split_csv_line(line);
    if (cells.size() != header.size()) {
      throw LoadError(path.string() + ": line " + std::to_string(line_no) + " has " + std::to_string(cells.size()) +
                      " cells, header has " + std::to_string(header.size()));
    }
    for (std::size_t i = 0; i < cells.size(); ++i) {
      try {
        std::size_t used = 0;
        if (label_col && i == *label_col) {
          labels.push_back(std::stoi(cells[i], &used));
        } else {
          data.push_back(std::stof(cells[i], &used));
        }
        if (used != cells[i].size()) throw std::invalid_argument("trailing characters");
      } catch (const std::exception&) {
        throw LoadError(path.string() + ": line " + std::to_string(line_no) + " column '" + header[i] +
                        "' is not numeric: '" + cells[i] + "'");
      }
    }
    ++rows;
  }
  if (rows == 0) throw LoadError(path.string() + ": no data rows");
  Manifest m;
  m.name = path.stem().string();
  m.splits["all"] = rows;
  std::optional<std::vector<int>> lv;
  if (label_col) lv = std::move(labels);
  return Dataset(Tensor({rows, features}, std::move(data)), std::move(lv), std::move(m));
}

Dataset synth_blobs(const BlobsConfig& cfg) {
  if (cfg.classes == 0 || cfg.samples_per_class == 0 || shape_numel(cfg.shape) == 0) {
    throw DomainError("synth_blobs needs positive classes, samples and dims");
  }
  Rng rng(derive_seed(cfg.seed, "blobs"));
  const std::size_t dims = shape_numel(cfg.shape);
  std::normal_distribution<double> center_dist(0.0, cfg.center_spread);
  std::vector<std::vector<double>> centers(cfg.classes, std::vector<double>(dims));
  for (auto& c : centers) {
    for (auto& v : c) v = center_dist(rng);
    if (cfg.clamp_unit) {
      for (auto& v : c) v = 0.5 + 0.25 * v;
    }
  }
  std::normal_distribution<double> noise(0.0, cfg.noise);
  const std::size_t n = cfg.classes * cfg.samples_per_class;
  std::vector<float> data;
  data.reserve(n * dims);
  std::vector<int> labels;
  labels.reserve(n);
  for (std::size_t s = 0; s < cfg.samples_per_class; ++s) {
    for (std::size_t k = 0; k < cfg.classes; ++k) {
      for (std::size_t d = 0; d < dims; ++d) {
        double v = centers[k][d] + noise(rng);
        if (cfg.clamp_unit) v = std::clamp(v, 0.0, 1.0);
        data.push_back(static_cast<float>(v));
      }
      labels.push_back(static_cast<int>(k));
    }
  }
  Shape shape{n};
  shape.insert(shape.end(), cfg.shape.begin(), cfg.shape.end());
  Manifest m;
  m.name = "blobs";
  m.dynamic_range = 1.0;
  m.splits["all"] = n;
  m.seed = cfg.seed;
  return Dataset(Tensor(std::move(shape), std::move(data)), std::move(labels), std::move(m));
}

Dataset take(const Dataset& data, std::span<const std::size_t> indices) {
  std::optional<std::vector<int>> labels;
  if (data.labels) {
    labels.emplace();
    for (auto i : indices) labels->push_back(data.labels->at(i));
  }
  Manifest m = data.manifest;
  m.splits = {{"all", indices.size()}};
  return Dataset(gather_rows(data.samples, indices), std::move(labels), std::move(m));
}

namespace {

// Largest-remainder allocation of `total` picks over groups of given sizes.
std::vector<std::size_t> allocate(const std::vector<std::size_t>& sizes, double fraction, std::size_t total) {
  std::vector<std::size_t> picks(sizes.size());
  std::vector<std::pair<double, std::size_t>> remainders;
  std::size_t assigned = 0;
  for (std::size_t g = 0; g < sizes.size(); ++g) {
    const double exact = fraction * double(sizes[g]);
    picks[g] = std::min(sizes[g], static_cast<std::size_t>(std::floor(exact)));
    assigned += picks[g];
    remainders.push_back({exact - double(picks[g]), g});
  }
  std::stable_sort(remainders.begin(), remainders.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t i = 0; assigned < total && i < remainders.size(); ++i) {
    const auto g = remainders[i].second;
    if (picks[g] < sizes[g]) {
      ++picks[g];
      ++assigned;
    }
  }
  return picks;
}

std::vector<std::size_t> stratified_pick(const Dataset& data, double fraction, std::uint64_t seed) {
  const std::size_t n = data.size();
  const auto total = static_cast<std::size_t>(std::floor(fraction * double(n) + 0.5));
  if (total == 0) throw DomainError("subset of fraction " + std::to_string(fraction) + " is empty");
  std::map<int, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < n; ++i) groups[data.labels ? (*data.labels)[i] : 0].push_back(i);
  std::vector<std::size_t> sizes;
  for (const auto& [label, idx] : groups) sizes.push_back(idx.size());
  const auto picks = allocate(sizes, fraction, total);
  Rng rng(derive_seed(seed, "subset"));
  std::vector<std::size_t> chosen;
  std::size_t g = 0;
  for (auto& [label, idx] : groups) {
    std::shuffle(idx.begin(), idx.end(), rng);
    chosen.insert(chosen.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(picks[g++]));
  }
  std::sort(chosen.begin(), chosen.end());
  return chosen;
}

}  // namespace

Dataset subset(const Dataset& data, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0) || fraction > 1.0) throw DomainError("subset fraction must lie in (0, 1]");
  const auto chosen = stratified_pick(data, fraction, seed);
  Dataset out = take(data, chosen);
  out.manifest.seed = seed;
  return out;
}

Split split(const Dataset& data, double test_fraction, std::uint64_t seed) {
  if (!(test_fraction > 0.0) || !(test_fraction < 1.0)) throw DomainError("test fraction must lie in (0, 1)");
  const auto test_idx = stratified_pick(data, test_fraction, seed);
  std::vector<std::size_t> train_idx;
  std::set<std::size_t> in_test(test_idx.begin(), test_idx.end());
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (!in_test.count(i)) train_idx.push_back(i);
  }
  if (train_idx.empty()) throw DomainError("train split is empty");
  Split s{take(data, train_idx), take(data, test_idx)};
  s.train.manifest.splits = {{"train", train_idx.size()}, {"test", test_idx.size()}};
  s.test.manifest.splits = s.train.manifest.splits;
  return s;
}

}  // namespace sponge
