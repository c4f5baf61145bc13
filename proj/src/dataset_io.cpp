#include "habit/dataset_io.hpp"

#include <fstream>
#include <sstream>

#include <json.hpp>

#include "habit/error.hpp"

namespace habit {

namespace {

using ordered_json = nlohmann::ordered_json;

ordered_json vector_to_json(const Vector<double>& v) {
  ordered_json arr = ordered_json::array();
  for (Eigen::Index k = 0; k < v.size(); ++k) arr.push_back(v(k));
  return arr;
}

Vector<double> vector_from_json(const nlohmann::json& arr, const char* field, std::size_t line) {
  if (!arr.is_array()) {
    throw FormatError("line " + std::to_string(line) + ": field '" + field + "' must be an array");
  }
  Vector<double> v(static_cast<Eigen::Index>(arr.size()));
  for (std::size_t k = 0; k < arr.size(); ++k) {
    if (!arr[k].is_number()) {
      throw FormatError("line " + std::to_string(line) + ": field '" + field + "' has a non-number");
    }
    v(static_cast<Eigen::Index>(k)) = arr[k].get<double>();
  }
  return v;
}

const nlohmann::json& require(const nlohmann::json& obj, const char* field, std::size_t line) {
  auto it = obj.find(field);
  if (it == obj.end()) {
    throw FormatError("line " + std::to_string(line) + ": missing field '" + field + "'");
  }
  return *it;
}

std::int64_t integer_field(const nlohmann::json& obj, const char* field, std::size_t line) {
  const auto& value = require(obj, field, line);
  if (!value.is_number_integer()) {
    throw FormatError("line " + std::to_string(line) + ": field '" + field + "' must be an integer");
  }
  return value.get<std::int64_t>();
}

template <typename Fn>
void for_each_line(const std::string& text, Fn&& fn) {
  std::istringstream in(text);
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (line.empty()) continue;
    nlohmann::json obj;
    try {
      obj = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw FormatError("line " + std::to_string(number) + ": " + e.what());
    }
    if (!obj.is_object()) throw FormatError("line " + std::to_string(number) + ": not an object");
    fn(obj, number);
  }
}

}  // namespace

std::string triplets_to_jsonl(const std::vector<TripletRecord>& records) {
  std::string out;
  for (const auto& r : records) {
    ordered_json obj;
    obj["id"] = r.id;
    obj["ref"] = vector_to_json(r.ref);
    obj["mod"] = vector_to_json(r.mod);
    obj["target_id"] = r.target_id;
    obj["noise_label"] = to_string(r.noise_label);
    out += obj.dump();
    out += '\n';
  }
  return out;
}

std::string gallery_to_jsonl(const std::vector<GalleryEntry>& gallery) {
  std::string out;
  for (const auto& g : gallery) {
    ordered_json obj;
    obj["id"] = g.id;
    obj["vec"] = vector_to_json(g.vec);
    out += obj.dump();
    out += '\n';
  }
  return out;
}

std::vector<TripletRecord> triplets_from_jsonl(const std::string& text) {
  std::vector<TripletRecord> out;
  for_each_line(text, [&](const nlohmann::json& obj, std::size_t line) {
    TripletRecord r;
    r.id = integer_field(obj, "id", line);
    r.ref = vector_from_json(require(obj, "ref", line), "ref", line);
    r.mod = vector_from_json(require(obj, "mod", line), "mod", line);
    r.target_id = integer_field(obj, "target_id", line);
    const auto& label = require(obj, "noise_label", line);
    if (!label.is_string()) throw FormatError("line " + std::to_string(line) + ": bad noise_label");
    r.noise_label = parse_noise_label(label.get<std::string>());
    out.push_back(std::move(r));
  });
  return out;
}

std::vector<GalleryEntry> gallery_from_jsonl(const std::string& text) {
  std::vector<GalleryEntry> out;
  for_each_line(text, [&](const nlohmann::json& obj, std::size_t line) {
    GalleryEntry g;
    g.id = integer_field(obj, "id", line);
    g.vec = vector_from_json(require(obj, "vec", line), "vec", line);
    out.push_back(std::move(g));
  });
  for (std::size_t k = 0; k < out.size(); ++k) {
    if (out[k].id != static_cast<std::int64_t>(k)) {
      throw FormatError("gallery ids must be dense and ordered; entry " + std::to_string(k) +
                        " has id " + std::to_string(out[k].id));
    }
  }
  return out;
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out << text;
  if (!out) throw IoError("write to '" + path.string() + "' failed");
}

void write_dataset(const std::filesystem::path& dir, const Dataset& data) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create '" + dir.string() + "': " + ec.message());
  write_text_file(dir / kTripletsFile, triplets_to_jsonl(data.records));
  write_text_file(dir / kGalleryFile, gallery_to_jsonl(data.gallery));
}

Dataset read_dataset(const std::filesystem::path& dir) {
  Dataset data;
  data.records = triplets_from_jsonl(read_text_file(dir / kTripletsFile));
  data.gallery = gallery_from_jsonl(read_text_file(dir / kGalleryFile));
  for (const auto& r : data.records) {
    if (r.target_id < 0 || r.target_id >= static_cast<std::int64_t>(data.gallery.size())) {
      throw FormatError("triplet " + std::to_string(r.id) + " references missing gallery id " +
                        std::to_string(r.target_id));
    }
  }
  return data;
}

}  // namespace habit
