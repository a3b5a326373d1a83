#include "drio/dataset_io.hpp"

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <sstream>
#include <tuple>

#include <json.hpp>

#include "drio/error.hpp"

namespace drio {
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kLayout = "sample-major [N][D][T]";

std::string read_file(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ValidationError("missing file: " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

std::uint64_t to_le(std::uint64_t bits) {
  if constexpr (std::endian::native == std::endian::big) {
    std::uint64_t out = 0;
    for (int b = 0; b < 8; ++b) out |= ((bits >> (8 * b)) & 0xFFu) << (8 * (7 - b));
    return out;
  }
  return bits;
}

MaskTensor read_mask(const fs::path& file, Shape3 shape, const char* what) {
  const std::string bytes = read_file(file);
  if (bytes.size() != shape.size()) {
    throw ValidationError(std::string(what) + ": dimension mismatch (expected " +
                          std::to_string(shape.size()) + " bytes, found " +
                          std::to_string(bytes.size()) + ")");
  }
  MaskTensor mask(shape);
  for (std::size_t k = 0; k < bytes.size(); ++k) {
    const auto b = static_cast<std::uint8_t>(bytes[k]);
    if (b > 1) throw ValidationError(std::string(what) + ": non-binary mask byte " + std::to_string(b));
    mask[k] = b;
  }
  return mask;
}

std::string mask_bytes(const MaskTensor& mask) {
  return std::string(reinterpret_cast<const char*>(mask.storage().data()), mask.size());
}

template <typename T>
T require_key(const json& meta, const char* key) {
  if (!meta.contains(key)) throw ValidationError(std::string("meta.json: missing key '") + key + "'");
  try {
    return meta.at(key).get<T>();
  } catch (const json::exception&) {
    throw ValidationError(std::string("meta.json: bad type for key '") + key + "'");
  }
}

TimeSeriesDataset load_directory(const fs::path& dir) {
  json meta;
  try {
    meta = json::parse(read_file(dir / "meta.json"));
  } catch (const json::parse_error& e) {
    throw ValidationError(std::string("meta.json: ") + e.what());
  }
  TimeSeriesDataset ds;
  ds.name = require_key<std::string>(meta, "name");
  const Shape3 shape{require_key<std::size_t>(meta, "N"), require_key<std::size_t>(meta, "D"),
                     require_key<std::size_t>(meta, "T")};
  ds.feature_names = require_key<std::vector<std::string>>(meta, "feature_names");
  if (meta.contains("dtype") && meta["dtype"] != "f64") throw ValidationError("meta.json: dtype must be f64");
  if (meta.contains("endianness") && meta["endianness"] != "little") {
    throw ValidationError("meta.json: endianness must be little");
  }
  if (meta.contains("layout") && meta["layout"] != kLayout) {
    throw ValidationError("meta.json: unsupported layout");
  }
  if (shape.n < 1 || shape.d < 1 || shape.t < 1) throw ValidationError("meta.json: N, D, T must be >= 1");

  const std::string raw = read_file(dir / "values.bin");
  if (raw.size() != shape.size() * sizeof(double)) {
    throw ValidationError("values.bin: dimension mismatch (expected " + std::to_string(shape.size()) +
                          " values, found " + std::to_string(raw.size() / sizeof(double)) + ")");
  }
  ds.raw_mask = read_mask(dir / "mask.bin", shape, "mask.bin");
  ds.values = RealTensor(shape);
  for (std::size_t k = 0; k < shape.size(); ++k) {
    std::uint64_t bits;
    std::memcpy(&bits, raw.data() + k * sizeof(double), sizeof(bits));
    const double v = std::bit_cast<double>(to_le(bits));
    if (ds.raw_mask[k]) {
      if (!std::isfinite(v)) throw ValidationError("values.bin: NaN at observed entry " + std::to_string(k));
      ds.values[k] = v;
    }
  }
  if (fs::exists(dir / "gtmask.bin")) ds.gt_mask = read_mask(dir / "gtmask.bin", shape, "gtmask.bin");
  ds.validate();
  return ds;
}

}  // namespace

void write_f64_le(std::ostream& os, std::span<const double> values) {
  std::string buf(values.size() * sizeof(double), '\0');
  for (std::size_t k = 0; k < values.size(); ++k) {
    const std::uint64_t bits = to_le(std::bit_cast<std::uint64_t>(values[k]));
    std::memcpy(buf.data() + k * sizeof(double), &bits, sizeof(bits));
  }
  os.write(buf.data(), static_cast<std::streamsize>(buf.size()));
}

std::vector<double> read_f64_le(std::istream& is, std::size_t count) {
  std::string buf(count * sizeof(double), '\0');
  is.read(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (static_cast<std::size_t>(is.gcount()) != buf.size()) throw ValidationError("truncated f64 payload");
  std::vector<double> out(count);
  for (std::size_t k = 0; k < count; ++k) {
    std::uint64_t bits;
    std::memcpy(&bits, buf.data() + k * sizeof(double), sizeof(bits));
    out[k] = std::bit_cast<double>(to_le(bits));
  }
  return out;
}

void write_file_atomic(const fs::path& path, const std::string& contents) {
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw Error("cannot write " + tmp.string());
    os.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    if (!os) throw Error("write failed: " + tmp.string());
  }
  fs::rename(tmp, path);
}

TimeSeriesDataset load_dataset(const fs::path& path) {
  if (path.extension() == ".csv") return load_dataset_csv(path);
  if (!fs::is_directory(path)) throw ValidationError("missing dataset directory: " + path.string());
  return load_directory(path);
}

void save_dataset(const TimeSeriesDataset& ds, const fs::path& dir) {
  ds.validate();
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (!fs::is_directory(dir)) throw Error("cannot create dataset directory " + dir.string());

  const Shape3 s = ds.shape();
  json meta = {{"name", ds.name},
               {"N", s.n},
               {"D", s.d},
               {"T", s.t},
               {"feature_names", ds.feature_names},
               {"dtype", "f64"},
               {"layout", kLayout},
               {"endianness", "little"}};
  write_file_atomic(dir / "meta.json", meta.dump(2) + "\n");

  std::vector<double> payload(ds.values.storage());
  for (std::size_t k = 0; k < payload.size(); ++k) {
    if (!ds.raw_mask[k]) payload[k] = std::numeric_limits<double>::quiet_NaN();
  }
  std::ostringstream values;
  write_f64_le(values, payload);
  write_file_atomic(dir / "values.bin", values.str());
  write_file_atomic(dir / "mask.bin", mask_bytes(ds.raw_mask));
  if (ds.has_gt_mask()) {
    write_file_atomic(dir / "gtmask.bin", mask_bytes(ds.gt_mask));
  } else if (fs::exists(dir / "gtmask.bin")) {
    fs::remove(dir / "gtmask.bin");
  }
}

void save_gt_mask(const MaskTensor& gt_mask, const fs::path& dir) {
  require_binary(gt_mask, "gtmask");
  write_file_atomic(dir / "gtmask.bin", mask_bytes(gt_mask));
}

TimeSeriesDataset load_dataset_csv(const fs::path& file) {
  std::ifstream is(file);
  if (!is) throw ValidationError("missing file: " + file.string());
  std::string line;
  if (!std::getline(is, line)) throw ValidationError("csv: empty file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "sample,feature,time,value,observed") {
    throw ValidationError("csv: expected header 'sample,feature,time,value,observed'");
  }
  struct Row {
    double value;
    int observed;
  };
  std::map<std::tuple<std::size_t, std::size_t, std::size_t>, Row> rows;
  std::size_t n = 0, d = 0, t = 0, line_no = 1;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    std::istringstream ls(line);
    std::string cell[5];
    for (auto& c : cell) {
      if (!std::getline(ls, c, ',')) throw ValidationError("csv: short row at line " + std::to_string(line_no));
    }
    try {
      const std::size_t i = std::stoul(cell[0]), f = std::stoul(cell[1]), k = std::stoul(cell[2]);
      const int obs = std::stoi(cell[4]);
      if (obs != 0 && obs != 1) throw ValidationError("csv: non-binary mask at line " + std::to_string(line_no));
      const double v = (cell[3] == "nan" || cell[3] == "NaN" || cell[3].empty())
                           ? std::numeric_limits<double>::quiet_NaN()
                           : std::stod(cell[3]);
      rows[{i, f, k}] = Row{v, obs};
      n = std::max(n, i + 1);
      d = std::max(d, f + 1);
      t = std::max(t, k + 1);
    } catch (const std::logic_error&) {
      throw ValidationError("csv: unparsable row at line " + std::to_string(line_no));
    }
  }
  if (rows.empty()) throw ValidationError("csv: no data rows");
  TimeSeriesDataset ds;
  ds.name = file.stem().string();
  for (std::size_t f = 0; f < d; ++f) ds.feature_names.push_back("f" + std::to_string(f));
  ds.values = RealTensor(n, d, t);
  ds.raw_mask = MaskTensor(n, d, t, 0);
  for (const auto& [key, row] : rows) {
    const auto [i, f, k] = key;
    if (row.observed) {
      if (!std::isfinite(row.value)) throw ValidationError("csv: NaN at observed entry");
      ds.values(i, f, k) = row.value;
      ds.raw_mask(i, f, k) = 1;
    }
  }
  ds.validate();
  return ds;
}

void save_dataset_csv(const TimeSeriesDataset& ds, const fs::path& file) {
  ds.validate();
  std::ostringstream os;
  os << "sample,feature,time,value,observed\n" << std::setprecision(17);
  for (std::size_t i = 0; i < ds.n(); ++i) {
    for (std::size_t d = 0; d < ds.values.d(); ++d) {
      for (std::size_t t = 0; t < ds.values.t(); ++t) {
        os << i << ',' << d << ',' << t << ',';
        if (ds.raw_mask(i, d, t)) {
          os << ds.values(i, d, t);
        } else {
          os << "nan";
        }
        os << ',' << static_cast<int>(ds.raw_mask(i, d, t)) << '\n';
      }
    }
  }
  write_file_atomic(file, os.str());
}

std::string fingerprint(const fs::path& path) {
  std::uint64_t hash = 0xcbf29ce484222325ULL;
  const auto feed = [&hash](const std::string& bytes) {
    for (unsigned char c : bytes) {
      hash ^= c;
      hash *= 0x100000001b3ULL;
    }
  };
  if (fs::is_directory(path)) {
    for (const char* name : {"meta.json", "values.bin", "mask.bin", "gtmask.bin"}) {
      if (fs::exists(path / name)) {
        feed(name);
        feed(read_file(path / name));
      }
    }
  } else {
    feed(read_file(path));
  }
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << hash;
  return os.str();
}

}  // namespace drio
