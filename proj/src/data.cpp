#include "ltfr/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "ltfr/binary_io.hpp"
#include "ltfr/error.hpp"
#include "ltfr/rng.hpp"

namespace ltfr {

namespace fs = std::filesystem;
using nlohmann::json;

std::string to_string(EntityKind k) { return k == EntityKind::artist ? "artist" : "music"; }
std::string to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    default: return "test";
  }
}

const EntityRecord& DatasetBundle::entity(const std::string& id) const {
  auto it = index.find(id);
  if (it == index.end()) throw UnknownIdError("unknown entity id '" + id + "'");
  return entities[it->second];
}

Split DatasetBundle::split_of(const std::string& id) const {
  auto it = index.find(id);
  if (it == index.end()) throw UnknownIdError("unknown entity id '" + id + "'");
  return split[it->second];
}

std::vector<std::string> DatasetBundle::ids_of_kind(EntityKind kind) const {
  std::vector<std::string> out;
  for (const auto& e : entities) {
    if (e.kind == kind) out.push_back(e.id);
  }
  return out;
}

std::vector<std::string> DatasetBundle::task_ids_in_split(Split s) const {
  std::vector<std::string> out;
  for (size_t i = 0; i < entities.size(); ++i) {
    if (entities[i].kind == task_kind && split[i] == s) out.push_back(entities[i].id);
  }
  return out;
}

std::vector<std::string> DatasetBundle::music_of_artist(const std::string& artist_id) const {
  std::vector<std::string> out;
  for (const auto& e : entities) {
    if (e.kind == EntityKind::music && e.owner_artist_id && *e.owner_artist_id == artist_id) {
      out.push_back(e.id);
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

size_t DatasetBundle::content_dim() const {
  return entities.empty() ? 0 : entities.front().content.size();
}

void DatasetBundle::validate() const {
  if (entities.size() != index.size()) throw DuplicateIdError("duplicate entity ids in catalog");
  if (split.size() != entities.size()) throw ValidationError("split assignment incomplete");
  const size_t dim = content_dim();
  for (const auto& e : entities) {
    if (e.kind == EntityKind::music && !e.owner_artist_id) {
      throw ValidationError("music '" + e.id + "' is missing owner_artist_id");
    }
    if (e.kind == EntityKind::artist && e.owner_artist_id) {
      throw ValidationError("artist '" + e.id + "' must not have owner_artist_id");
    }
    if (e.popularity < 0 || e.popularity >= kPopularityBuckets) {
      throw ValidationError("entity '" + e.id + "' has popularity outside 0.." +
                            std::to_string(kPopularityBuckets - 1));
    }
    if (e.content.size() != dim) {
      throw ValidationError("entity '" + e.id + "' content dim " +
                            std::to_string(e.content.size()) + " != " + std::to_string(dim));
    }
    if (e.owner_artist_id) {
      auto it = index.find(*e.owner_artist_id);
      if (it == index.end()) {
        throw DanglingIdError("music '" + e.id + "' references unknown owner '" +
                              *e.owner_artist_id + "'");
      }
      if (entities[it->second].kind != EntityKind::artist) {
        throw ValidationError("music '" + e.id + "' owner '" + *e.owner_artist_id +
                              "' is not an artist");
      }
    }
  }
  for (const auto& r : interactions) {
    auto it = index.find(r.artist_id);
    if (it == index.end()) {
      throw DanglingIdError("interaction references unknown artist '" + r.artist_id + "'");
    }
    if (entities[it->second].kind != EntityKind::artist) {
      throw ValidationError("interaction target '" + r.artist_id + "' is not an artist");
    }
    if (!(r.weight >= 0.0)) {
      throw ValidationError("interaction (" + r.user_id + ", " + r.artist_id +
                            ") has negative weight");
    }
  }
  for (const auto& r : relations) {
    if (r.src == r.dst) throw ValidationError("relation has identical endpoints '" + r.src + "'");
    for (const std::string* id : {&r.src, &r.dst}) {
      if (!index.count(*id)) throw DanglingIdError("relation references unknown id '" + *id + "'");
    }
    if (entity(r.src).kind != entity(r.dst).kind) {
      throw ValidationError("relation (" + r.src + ", " + r.dst + ") mixes entity kinds");
    }
    if (entity(r.src).kind != task_kind) {
      throw ValidationError("relation (" + r.src + ", " + r.dst + ") kind does not match task");
    }
  }
}

// ---------------------------------------------------------------------------
// CSV loading

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

struct CsvReader {
  std::ifstream in;
  std::string path;
  size_t line_no = 0;

  explicit CsvReader(const std::string& p) : in(p), path(p) {
    if (!in) throw IoError("cannot open '" + p + "'");
  }

  bool next(std::vector<std::string>& fields) {
    std::string line;
    while (std::getline(in, line)) {
      ++line_no;
      if (line.empty() || line == "\r") continue;
      fields = split_csv_line(line);
      return true;
    }
    return false;
  }

  [[noreturn]] void fail(const std::string& msg) const {
    throw ParseError(path + ":" + std::to_string(line_no) + ": " + msg);
  }

  void expect_header(const std::string& prefix) {
    std::vector<std::string> fields;
    if (!next(fields)) fail("missing header");
    std::string joined;
    for (size_t i = 0; i < fields.size(); ++i) joined += (i ? "," : "") + fields[i];
    if (joined.rfind(prefix, 0) != 0) fail("unexpected header '" + joined + "'");
  }
};

double parse_double(CsvReader& r, const std::string& s, const char* what) {
  try {
    size_t pos = 0;
    double v = std::stod(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    r.fail(std::string("bad ") + what + " value '" + s + "'");
  }
}

int parse_int(CsvReader& r, const std::string& s, const char* what) {
  try {
    size_t pos = 0;
    int v = std::stoi(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    r.fail(std::string("bad ") + what + " value '" + s + "'");
  }
}

}  // namespace

DatasetPaths DatasetPaths::in_dir(const std::string& dir) {
  DatasetPaths p;
  p.entities = dir + "/entities.csv";
  p.content = dir + "/content.csv";
  p.interactions = dir + "/interactions.csv";
  p.relations = dir + "/relations.csv";
  return p;
}

DatasetBundle load_dataset(const DatasetPaths& paths) {
  DatasetBundle b;

  {
    CsvReader r(paths.entities);
    r.expect_header("id,kind,genre,region,popularity,owner_artist_id");
    std::vector<std::string> f;
    while (r.next(f)) {
      if (f.size() != 6) r.fail("expected 6 fields, got " + std::to_string(f.size()));
      EntityRecord e;
      e.id = f[0];
      if (e.id.empty()) r.fail("empty id");
      if (f[1] == "artist") {
        e.kind = EntityKind::artist;
      } else if (f[1] == "music") {
        e.kind = EntityKind::music;
      } else {
        r.fail("unknown kind '" + f[1] + "'");
      }
      e.genre = f[2];
      e.region = f[3];
      e.popularity = parse_int(r, f[4], "popularity");
      if (!f[5].empty()) e.owner_artist_id = f[5];
      if (b.index.count(e.id)) {
        throw DuplicateIdError(paths.entities + ":" + std::to_string(r.line_no) +
                               ": duplicate id '" + e.id + "'");
      }
      b.index.emplace(e.id, b.entities.size());
      b.entities.push_back(std::move(e));
    }
  }

  {
    CsvReader r(paths.content);
    r.expect_header("id,f0");
    std::vector<std::string> f;
    std::set<std::string> seen;
    while (r.next(f)) {
      if (f.size() < 2) r.fail("expected id plus at least one feature");
      auto it = b.index.find(f[0]);
      if (it == b.index.end()) throw DanglingIdError("content row for unknown id '" + f[0] + "'");
      if (!seen.insert(f[0]).second) {
        throw DuplicateIdError("duplicate content row for id '" + f[0] + "'");
      }
      std::vector<double> v(f.size() - 1);
      for (size_t i = 1; i < f.size(); ++i) v[i - 1] = parse_double(r, f[i], "feature");
      b.entities[it->second].content = std::move(v);
    }
    for (const auto& e : b.entities) {
      if (e.content.empty()) {
        throw ValidationError("entity '" + e.id + "' has no content row");
      }
    }
  }

  {
    CsvReader r(paths.interactions);
    r.expect_header("user_id,artist_id,weight");
    std::vector<std::string> f;
    while (r.next(f)) {
      if (f.size() != 3) r.fail("expected 3 fields, got " + std::to_string(f.size()));
      InteractionRecord rec;
      rec.user_id = f[0];
      rec.artist_id = f[1];
      rec.weight = parse_double(r, f[2], "weight");
      b.interactions.push_back(std::move(rec));
    }
  }

  {
    CsvReader r(paths.relations);
    r.expect_header("src,dst");
    std::vector<std::string> f;
    while (r.next(f)) {
      if (f.size() != 2) r.fail("expected 2 fields, got " + std::to_string(f.size()));
      b.relations.push_back(RelationEdge{f[0], f[1]});
    }
  }

  // Task kind follows the relation endpoints; artist when there are none.
  b.task_kind = EntityKind::artist;
  if (!b.relations.empty()) {
    auto it = b.index.find(b.relations.front().src);
    if (it != b.index.end()) b.task_kind = b.entities[it->second].kind;
  }
  b.split.assign(b.entities.size(), Split::train);
  b.relation_spans_splits.assign(b.relations.size(), false);
  b.validate();
  return b;
}

namespace {

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

void write_dataset(const DatasetBundle& bundle, const std::string& dir) {
  fs::create_directories(dir);
  auto open = [&](const std::string& name) {
    std::ofstream out(dir + "/" + name, std::ios::binary);
    if (!out) throw IoError("cannot write '" + dir + "/" + name + "'");
    return out;
  };

  {
    auto out = open("entities.csv");
    out << "id,kind,genre,region,popularity,owner_artist_id\n";
    for (const auto& e : bundle.entities) {
      out << e.id << ',' << to_string(e.kind) << ',' << e.genre << ',' << e.region << ','
          << e.popularity << ',' << (e.owner_artist_id ? *e.owner_artist_id : "") << '\n';
    }
  }
  {
    auto out = open("content.csv");
    out << "id";
    const size_t dim = bundle.content_dim();
    for (size_t i = 0; i < dim; ++i) out << ",f" << i;
    out << '\n';
    for (const auto& e : bundle.entities) {
      out << e.id;
      for (double v : e.content) out << ',' << format_double(v);
      out << '\n';
    }
  }
  {
    auto out = open("interactions.csv");
    out << "user_id,artist_id,weight\n";
    for (const auto& r : bundle.interactions) {
      out << r.user_id << ',' << r.artist_id << ',' << format_double(r.weight) << '\n';
    }
  }
  {
    auto out = open("relations.csv");
    out << "src,dst\n";
    for (const auto& r : bundle.relations) out << r.src << ',' << r.dst << '\n';
  }
}

DatasetBundle split_dataset(DatasetBundle bundle, const SplitRatios& ratios, uint64_t seed) {
  const double sum = ratios.train + ratios.val + ratios.test;
  if (std::abs(sum - 1.0) > 1e-9) throw ValidationError("split ratios must sum to 1");
  if (ratios.train < 0.0 || ratios.val < 0.0 || ratios.test < 0.0) {
    throw ValidationError("split ratios must be nonnegative");
  }

  std::vector<size_t> task_idx;
  for (size_t i = 0; i < bundle.entities.size(); ++i) {
    if (bundle.entities[i].kind == bundle.task_kind) task_idx.push_back(i);
  }
  const size_t n = task_idx.size();
  if (n == 0) throw ValidationError("no entities of the task kind to split");

  // Exact counts: floor each, then hand out the remainder by largest
  // fractional part (train, then val, then test on ties).
  const double want[3] = {ratios.train * n, ratios.val * n, ratios.test * n};
  size_t counts[3];
  size_t assigned = 0;
  for (int i = 0; i < 3; ++i) {
    counts[i] = static_cast<size_t>(std::floor(want[i]));
    assigned += counts[i];
  }
  std::vector<int> order = {0, 1, 2};
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return want[a] - std::floor(want[a]) > want[b] - std::floor(want[b]);
  });
  for (size_t k = 0; assigned < n; ++k, ++assigned) counts[order[k % 3]] += 1;

  const double r[3] = {ratios.train, ratios.val, ratios.test};
  const char* names[3] = {"train", "val", "test"};
  for (int i = 0; i < 3; ++i) {
    if (r[i] > 0.0 && counts[i] == 0) {
      throw ValidationError(std::string("split ratio for ") + names[i] +
                            " rounds to zero entities");
    }
  }

  Rng rng(seed);
  rng.shuffle(task_idx);

  std::vector<Split> assignment(bundle.entities.size(), Split::train);
  size_t pos = 0;
  const Split splits[3] = {Split::train, Split::val, Split::test};
  for (int s = 0; s < 3; ++s) {
    for (size_t k = 0; k < counts[s]; ++k) assignment[task_idx[pos++]] = splits[s];
  }

  // Non-task entities: music inherits its owner, artists stay in train.
  for (size_t i = 0; i < bundle.entities.size(); ++i) {
    const auto& e = bundle.entities[i];
    if (e.kind == bundle.task_kind) continue;
    if (e.kind == EntityKind::music && e.owner_artist_id) {
      assignment[i] = assignment[bundle.index.at(*e.owner_artist_id)];
    }
  }

  bundle.split = std::move(assignment);
  bundle.relation_spans_splits.assign(bundle.relations.size(), false);
  for (size_t i = 0; i < bundle.relations.size(); ++i) {
    const auto& rel = bundle.relations[i];
    bundle.relation_spans_splits[i] =
        bundle.split_of(rel.src) != bundle.split_of(rel.dst);
  }
  return bundle;
}

// ---------------------------------------------------------------------------
// Embedding file format

EmbeddingMatrix EmbeddingMatrix::create(std::vector<std::string> ids, size_t dim) {
  EmbeddingMatrix m;
  m.values = Matrix(ids.size(), dim);
  m.ids = std::move(ids);
  for (size_t i = 0; i < m.ids.size(); ++i) {
    if (!m.index.emplace(m.ids[i], i).second) {
      throw DuplicateIdError("EmbeddingMatrix: duplicate id '" + m.ids[i] + "'");
    }
  }
  return m;
}

std::vector<double> EmbeddingMatrix::row(const std::string& id) const {
  auto it = index.find(id);
  if (it == index.end()) throw UnknownIdError("EmbeddingMatrix: unknown id '" + id + "'");
  return values.row(it->second);
}

void EmbeddingMatrix::set_row(const std::string& id, const std::vector<double>& v) {
  auto it = index.find(id);
  if (it == index.end()) throw UnknownIdError("EmbeddingMatrix: unknown id '" + id + "'");
  values.set_row(it->second, v);
}

EmbeddingMatrix EmbeddingMatrix::subset(const std::vector<std::string>& keep_ids) const {
  EmbeddingMatrix out = create(keep_ids, dim());
  for (const auto& id : keep_ids) out.set_row(id, row(id));
  return out;
}

namespace {
constexpr char kMagic[4] = {'L', 'T', 'F', 'R'};
constexpr uint8_t kEmbeddingVersion = 1;

// Scans one complete JSON value (array) off the stream, honoring strings and
// escapes, so the binary payload can follow immediately after it.
std::string read_json_value_bytes(std::istream& is) {
  std::string out;
  int depth = 0;
  bool in_string = false;
  bool escaped = false;
  for (;;) {
    int ci = is.get();
    if (ci == EOF) throw IoError("truncated file reading id array");
    char c = static_cast<char>(ci);
    out += c;
    if (in_string) {
      if (escaped) {
        escaped = false;
      } else if (c == '\\') {
        escaped = true;
      } else if (c == '"') {
        in_string = false;
      }
      continue;
    }
    if (c == '"') {
      in_string = true;
    } else if (c == '[') {
      ++depth;
    } else if (c == ']') {
      --depth;
      if (depth == 0) return out;
      if (depth < 0) throw ParseError("malformed id array");
    } else if (depth == 0 && !std::isspace(static_cast<unsigned char>(c))) {
      throw ParseError("embedding file: expected JSON id array");
    }
  }
}
}  // namespace

void write_embeddings(const EmbeddingMatrix& m, const std::string& path) {
  if (m.dim() == 0) throw ValidationError("write_embeddings: dim must be > 0");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write '" + path + "'");
  out.write(kMagic, 4);
  binio::write_u8(out, kEmbeddingVersion);
  binio::write_u32(out, static_cast<uint32_t>(m.dim()));
  binio::write_u32(out, static_cast<uint32_t>(m.count()));
  json ids = json::array();
  for (const auto& id : m.ids) ids.push_back(id);
  const std::string id_bytes = ids.dump();
  out.write(id_bytes.data(), static_cast<std::streamsize>(id_bytes.size()));
  for (size_t i = 0; i < m.values.size(); ++i) {
    binio::write_f32(out, static_cast<float>(m.values[i]));
  }
  if (!out) throw IoError("failed writing '" + path + "'");
}

EmbeddingMatrix read_embeddings(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "'");
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0) {
    throw ParseError("'" + path + "': bad magic");
  }
  uint8_t version = binio::read_u8(in, "version");
  if (version != kEmbeddingVersion) {
    throw ParseError("'" + path + "': unsupported version " + std::to_string(version));
  }
  uint32_t dim = binio::read_u32(in, "dim");
  uint32_t count = binio::read_u32(in, "count");
  if (dim == 0) throw ParseError("'" + path + "': dim must be > 0");

  std::string id_bytes = read_json_value_bytes(in);
  json ids_json;
  try {
    ids_json = json::parse(id_bytes);
  } catch (const json::exception& e) {
    throw ParseError("'" + path + "': bad id array: " + e.what());
  }
  if (!ids_json.is_array() || ids_json.size() != count) {
    throw ParseError("'" + path + "': id array size does not match count (dim-mismatch)");
  }
  std::vector<std::string> ids;
  ids.reserve(count);
  for (const auto& v : ids_json) {
    if (!v.is_string()) throw ParseError("'" + path + "': non-string id");
    ids.push_back(v.get<std::string>());
  }
  EmbeddingMatrix m = EmbeddingMatrix::create(std::move(ids), dim);
  for (size_t i = 0; i < m.values.size(); ++i) {
    m.values[i] = static_cast<double>(binio::read_f32(in, "embedding values"));
  }
  return m;
}

}  // namespace ltfr
