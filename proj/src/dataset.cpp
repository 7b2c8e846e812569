#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include "cirevl/serialization.hpp"
#include "cirevl/storage.hpp"

namespace cirevl {

IntegrityError::IntegrityError(const std::string& message, std::vector<std::string> ids)
    : Error(ErrorCode::kIntegrityError, message), ids_(std::move(ids)) {}

const ImageRecord* CanonicalDataset::find_image(const std::string& id) const {
  if (by_id_.size() == images.size()) {
    const auto it = by_id_.find(id);
    return it == by_id_.end() ? nullptr : &images[it->second];
  }
  for (const auto& img : images) {
    if (img.id == id) return &img;
  }
  return nullptr;
}

void CanonicalDataset::reindex() {
  by_id_.clear();
  for (std::size_t i = 0; i < images.size(); ++i) by_id_.emplace(images[i].id, i);
}

namespace {

// Converts a parser byte offset into "line L, column C".
std::string describe_offset(const std::string& text, std::size_t byte) {
  std::size_t line = 1;
  std::size_t col = 1;
  for (std::size_t i = 0; i < std::min(byte, text.size()); ++i) {
    if (text[i] == '\n') {
      ++line;
      col = 1;
    } else {
      ++col;
    }
  }
  return "line " + std::to_string(line) + ", column " + std::to_string(col);
}

Json parse_document(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) {
    throw Error(ErrorCode::kIoError, "dataset file not found: " + path.string());
  }
  const std::string text = read_file(path);
  try {
    return Json::parse(text);
  } catch (const Json::parse_error& e) {
    throw Error(ErrorCode::kParseError,
                path.string() + ": " + describe_offset(text, e.byte == 0 ? 0 : e.byte - 1) + ": " +
                    e.what());
  }
}

const Json* lookup(const Json& root, const std::string& dotted) {
  const Json* node = &root;
  if (dotted.empty()) return node;
  std::stringstream parts(dotted);
  std::string part;
  while (std::getline(parts, part, '.')) {
    if (node->is_object()) {
      const auto it = node->find(part);
      if (it == node->end()) return nullptr;
      node = &*it;
    } else if (node->is_array() && !part.empty() &&
               std::all_of(part.begin(), part.end(), ::isdigit)) {
      const auto idx = std::stoul(part);
      if (idx >= node->size()) return nullptr;
      node = &(*node)[idx];
    } else {
      return nullptr;
    }
  }
  return node;
}

std::string scalar_string(const Json& j) {
  if (j.is_string()) return j.get<std::string>();
  if (j.is_number_integer()) return std::to_string(j.get<long long>());
  if (j.is_number()) return j.dump();
  throw Error(ErrorCode::kParseError, "expected a string or number, got " + j.dump());
}

std::vector<std::string> string_list(const Json& j) {
  std::vector<std::string> out;
  if (j.is_array()) {
    for (const auto& item : j) out.push_back(scalar_string(item));
  } else if (!j.is_null()) {
    out.push_back(scalar_string(j));
  }
  return out;
}

std::string replace_all(std::string text, std::string_view from, std::string_view to) {
  for (auto pos = text.find(from); pos != std::string::npos; pos = text.find(from, pos + to.size())) {
    text.replace(pos, from.size(), to);
  }
  return text;
}

CanonicalDataset from_canonical(const Json& doc, const std::filesystem::path& path) {
  if (!doc.is_object() || !doc.contains("images") || !doc.contains("queries")) {
    throw Error(ErrorCode::kParseError,
                path.string() + ": not a canonical dataset (needs 'images' and 'queries'); "
                                "supply an adapter mapping");
  }
  CanonicalDataset ds;
  try {
    ds.name = doc.value("name", path.stem().string());
    ds.images = doc.at("images").get<std::vector<ImageRecord>>();
    ds.queries = doc.at("queries").get<std::vector<CompositionalQuery>>();
    if (doc.contains("default_exclude_reference") && !doc["default_exclude_reference"].is_null()) {
      ds.default_exclude_reference = doc["default_exclude_reference"].get<bool>();
    }
  } catch (const Json::exception& e) {
    throw Error(ErrorCode::kParseError, path.string() + ": " + e.what());
  }
  return ds;
}

CanonicalDataset from_mapping(const Json& doc, const AdapterMapping& m,
                              const std::filesystem::path& path) {
  CanonicalDataset ds;
  ds.name = m.name.empty() ? path.stem().string() : m.name;
  ds.default_exclude_reference = m.default_exclude_reference;

  const Json* images = lookup(doc, m.images_path);
  if (!images) throw Error(ErrorCode::kParseError, "mapping: images path '" + m.images_path + "' not found");
  auto make_uri = [&](const std::string& id, const Json* uri_node) {
    if (!m.image_uri_template.empty()) return replace_all(m.image_uri_template, "{id}", id);
    if (!uri_node) throw Error(ErrorCode::kParseError, "mapping: image '" + id + "' has no uri");
    return scalar_string(*uri_node);
  };
  if (images->is_object()) {
    for (const auto& [id, value] : images->items()) {
      const Json* uri = value.is_object() ? lookup(value, m.image_uri_field) : &value;
      ds.images.push_back({id, make_uri(id, uri), {}});
    }
  } else if (images->is_array()) {
    for (const auto& item : *images) {
      const Json* id_node = item.is_object() ? lookup(item, m.image_id_field) : &item;
      if (!id_node) throw Error(ErrorCode::kParseError, "mapping: image record without id: " + item.dump());
      const std::string id = scalar_string(*id_node);
      ds.images.push_back({id, make_uri(id, item.is_object() ? lookup(item, m.image_uri_field) : nullptr), {}});
    }
  } else {
    throw Error(ErrorCode::kParseError, "mapping: images path must be an array or object");
  }

  const Json* queries = lookup(doc, m.queries_path);
  if (!queries || !queries->is_array()) {
    throw Error(ErrorCode::kParseError, "mapping: queries path '" + m.queries_path + "' is not an array");
  }
  std::size_t index = 0;
  for (const auto& rec : *queries) {
    auto field = [&](const std::string& name, bool required) -> const Json* {
      if (name.empty()) return nullptr;
      const Json* node = lookup(rec, name);
      if (required && !node) {
        throw Error(ErrorCode::kParseError, "mapping: query " + std::to_string(index) +
                                                " lacks field '" + name + "'");
      }
      return node;
    };
    CompositionalQuery q;
    const Json* id = field(m.query_id_field, true);
    q.id = id ? scalar_string(*id) : std::to_string(index);
    q.reference_image_id = scalar_string(*field(m.reference_field, true));
    q.instruction = scalar_string(*field(m.instruction_field, true));
    q.positives = string_list(*field(m.positives_field, true));
    if (const Json* subset = field(m.subset_field, false)) q.subset_ids = string_list(*subset);
    if (const Json* word = field(m.domain_word_field, false)) q.domain_word = scalar_string(*word);
    if (const Json* task = field(m.task_field, false)) {
      q.task = parse_task_kind(scalar_string(*task));
    } else {
      q.task = m.task.value_or(TaskKind::kCir);
    }
    ds.queries.push_back(std::move(q));
    ++index;
  }
  return ds;
}

}  // namespace

AdapterMapping AdapterMapping::from_json(const Json& j) {
  AdapterMapping m;
  m.name = j.value("name", std::string{});
  if (j.contains("default_exclude_reference") && !j["default_exclude_reference"].is_null()) {
    m.default_exclude_reference = j["default_exclude_reference"].get<bool>();
  }
  const Json& images = j.at("images");
  m.images_path = images.value("path", std::string{});
  m.image_id_field = images.value("id", m.image_id_field);
  m.image_uri_field = images.value("uri", m.image_uri_field);
  m.image_uri_template = images.value("uri_template", std::string{});

  const Json& q = j.at("queries");
  m.queries_path = q.value("path", std::string{});
  m.query_id_field = q.value("id", std::string{});
  m.reference_field = q.at("reference_image_id").get<std::string>();
  m.instruction_field = q.at("instruction").get<std::string>();
  m.positives_field = q.at("positives").get<std::string>();
  m.subset_field = q.value("subset_ids", std::string{});
  m.domain_word_field = q.value("domain_word", std::string{});
  m.task_field = q.value("task_field", std::string{});
  if (q.contains("task")) m.task = parse_task_kind(q["task"].get<std::string>());
  for (const auto* required : {&m.reference_field, &m.instruction_field, &m.positives_field}) {
    if (required->empty()) {
      throw Error(ErrorCode::kParseError,
                  "adapter mapping must map reference_image_id, instruction and positives");
    }
  }
  return m;
}

AdapterMapping AdapterMapping::load(const std::filesystem::path& path) {
  try {
    return from_json(Json::parse(read_file(path)));
  } catch (const Json::exception& e) {
    throw Error(ErrorCode::kParseError, "adapter mapping " + path.string() + ": " + e.what());
  }
}

void validate_dataset(const CanonicalDataset& ds) {
  std::set<std::string> ids;
  std::vector<std::string> duplicates;
  for (const auto& img : ds.images) {
    if (img.id.empty() || img.uri.empty()) {
      throw IntegrityError("image record with empty id or uri ('" + img.id + "')", {img.id});
    }
    if (!ids.insert(img.id).second) duplicates.push_back(img.id);
  }
  if (!duplicates.empty()) {
    std::string msg = "duplicate image ids:";
    for (const auto& d : duplicates) msg += " " + d;
    throw IntegrityError(msg, duplicates);
  }

  std::set<std::string> missing;
  std::vector<std::string> bad_queries;
  std::string problems;
  for (const auto& q : ds.queries) {
    auto check = [&](const std::string& id) {
      if (!ids.count(id)) missing.insert(id);
    };
    check(q.reference_image_id);
    for (const auto& p : q.positives) check(p);
    if (q.subset_ids) {
      for (const auto& s : *q.subset_ids) check(s);
      for (const auto& p : q.positives) {
        if (std::find(q.subset_ids->begin(), q.subset_ids->end(), p) == q.subset_ids->end()) {
          bad_queries.push_back(q.id);
          problems += " query '" + q.id + "': positive '" + p + "' not in subset;";
        }
      }
    }
    if (q.positives.empty()) {
      bad_queries.push_back(q.id);
      problems += " query '" + q.id + "': no positives;";
    }
    if (single_line(q.instruction).empty()) {
      bad_queries.push_back(q.id);
      problems += " query '" + q.id + "': empty instruction;";
    }
    if (q.task == TaskKind::kDomainConversion && (!q.domain_word || q.domain_word->empty())) {
      bad_queries.push_back(q.id);
      problems += " query '" + q.id + "': domain-conversion without domain_word;";
    }
  }
  if (!missing.empty()) {
    std::string msg = "queries reference unknown image ids:";
    for (const auto& id : missing) msg += " " + id;
    throw IntegrityError(msg, {missing.begin(), missing.end()});
  }
  if (!bad_queries.empty()) throw IntegrityError("invalid queries:" + problems, bad_queries);
}

CanonicalDataset load_dataset(const std::filesystem::path& path,
                              const std::optional<AdapterMapping>& mapping) {
  const Json doc = parse_document(path);
  CanonicalDataset ds = mapping ? from_mapping(doc, *mapping, path) : from_canonical(doc, path);
  ds.root = path.parent_path();
  ds.reindex();
  validate_dataset(ds);
  return ds;
}

void write_dataset(const std::filesystem::path& path, const CanonicalDataset& ds) {
  Json j{{"name", ds.name}, {"images", ds.images}, {"queries", ds.queries}};
  if (ds.default_exclude_reference) j["default_exclude_reference"] = *ds.default_exclude_reference;
  write_file_atomic(path, j.dump(2) + "\n");
}

}  // namespace cirevl
