#include "qpburst/eventio.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "json.hpp"
#include "qpburst/errors.hpp"
#include "qpburst/version.hpp"

namespace qpburst {

using nlohmann::json;

namespace {

constexpr char kBinaryMagic[8] = {'Q', 'P', 'E', 'V', 'T', 'C', 'B', '1'};

json header_json(const EventFileHeader& h, const char* kind) {
  return {{"kind", kind},
          {"schema_version", h.schema_version},
          {"config_hash", h.config_hash},
          {"tool_version", h.tool_version},
          {"n_events", h.n_events}};
}

EventFileHeader parse_header(const json& j, const char* kind) {
  try {
    if (j.at("kind").get<std::string>() != kind)
      throw SchemaError(std::string("expected a ") + kind + " file");
    EventFileHeader h;
    h.schema_version = j.at("schema_version").get<int>();
    if (h.schema_version != kEventSchemaVersion)
      throw SchemaError("unsupported schema version " + std::to_string(h.schema_version));
    h.config_hash = j.at("config_hash").get<std::string>();
    h.tool_version = j.at("tool_version").get<std::string>();
    h.n_events = j.at("n_events").get<std::size_t>();
    return h;
  } catch (const json::exception& e) {
    throw SchemaError(std::string("bad file header: ") + e.what());
  }
}

json event_json(const EventRecord& ev) {
  json qubits = json::object();
  double width = 0.0;
  std::size_t pre = 0;
  for (const auto& w : ev.waveforms) {
    qubits[w.qubit] = {{"n", w.n}, {"N", w.N}};
    width = w.bin_width;
    pre = w.pre_trigger_bins;
  }
  return {{"event_id", ev.event_id},
          {"trigger_time", ev.trigger_time},
          {"bin_width", width},
          {"pre_trigger_bins", pre},
          {"qubits", qubits}};
}

EventRecord parse_event(const json& j) {
  try {
    EventRecord ev;
    ev.event_id = j.at("event_id").get<std::uint64_t>();
    ev.trigger_time = j.at("trigger_time").get<double>();
    const double width = j.at("bin_width").get<double>();
    const auto pre = j.at("pre_trigger_bins").get<std::size_t>();
    for (const auto& [name, data] : j.at("qubits").items()) {
      BinnedWaveform w;
      w.qubit = name;
      w.trigger_time = ev.trigger_time;
      w.bin_width = width;
      w.pre_trigger_bins = pre;
      w.n = data.at("n").get<std::vector<int>>();
      w.N = data.at("N").get<std::vector<int>>();
      if (w.n.size() != w.N.size()) throw SchemaError("n and N lengths differ");
      w.bin_centers.resize(w.n.size());
      for (std::size_t i = 0; i < w.n.size(); ++i)
        w.bin_centers[i] = (static_cast<double>(i) - static_cast<double>(pre) + 0.5) * width;
      w.validate();
      ev.waveforms.push_back(std::move(w));
    }
    return ev;
  } catch (const json::exception& e) {
    throw SchemaError(std::string("bad event record: ") + e.what());
  }
}

std::ofstream open_out(const std::string& path, bool binary = false) {
  std::ofstream out(path, binary ? std::ios::binary : std::ios::out);
  if (!out) throw IoError("cannot write " + path);
  return out;
}

void put_u32(std::ostream& o, std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  o.write(reinterpret_cast<const char*>(b), 4);
}

void put_u64(std::ostream& o, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  o.write(reinterpret_cast<const char*>(b), 8);
}

std::uint64_t get_uint(std::istream& in, int bytes) {
  unsigned char b[8] = {};
  if (!in.read(reinterpret_cast<char*>(b), bytes)) throw SchemaError("truncated binary file");
  std::uint64_t v = 0;
  for (int i = bytes - 1; i >= 0; --i) v = (v << 8) | b[i];
  return v;
}

void write_record(std::ostream& o, const json& j) {
  const auto bytes = json::to_cbor(j);
  put_u32(o, static_cast<std::uint32_t>(bytes.size()));
  o.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

json read_record(std::istream& in) {
  const auto size = get_uint(in, 4);
  std::vector<std::uint8_t> bytes(size);
  if (!in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(size)))
    throw SchemaError("truncated binary record");
  try {
    return json::from_cbor(bytes);
  } catch (const json::exception& e) {
    throw SchemaError(std::string("bad binary record: ") + e.what());
  }
}

}  // namespace

void write_events_jsonl(const std::string& path, const EventFile& file) {
  auto out = open_out(path);
  out << header_json(file.header, "qpburst-events").dump() << '\n';
  for (const auto& ev : file.events) out << event_json(ev).dump() << '\n';
  if (!out) throw IoError("failed writing " + path);
}

void write_events_binary(const std::string& path, const EventFile& file) {
  auto out = open_out(path, true);
  out.write(kBinaryMagic, sizeof kBinaryMagic);
  write_record(out, header_json(file.header, "qpburst-events"));
  for (const auto& ev : file.events) write_record(out, event_json(ev));
  if (!out) throw IoError("failed writing " + path);
}

EventFile read_events(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open event file " + path);
  char magic[8] = {};
  in.read(magic, 8);
  EventFile file;
  if (in.gcount() == 8 && std::memcmp(magic, kBinaryMagic, 8) == 0) {
    file.header = parse_header(read_record(in), "qpburst-events");
    for (std::size_t i = 0; i < file.header.n_events; ++i)
      file.events.push_back(parse_event(read_record(in)));
  } else {
    in.clear();
    in.seekg(0);
    std::string line;
    if (!std::getline(in, line)) throw SchemaError("event file " + path + " has no header");
    try {
      file.header = parse_header(json::parse(line), "qpburst-events");
      while (std::getline(in, line))
        if (!line.empty()) file.events.push_back(parse_event(json::parse(line)));
    } catch (const json::exception& e) {
      throw SchemaError(std::string("malformed event file: ") + e.what());
    }
  }
  if (file.events.size() != file.header.n_events)
    throw SchemaError("event count does not match the header");
  return file;
}

void write_truth_jsonl(const std::string& path, const EventFileHeader& header,
                       const std::vector<TruthRecord>& truth) {
  auto out = open_out(path);
  out << header_json(header, "qpburst-truth").dump() << '\n';
  for (const auto& t : truth) {
    json edep = json::object();
    for (const auto& [q, e] : t.per_qubit_edep) edep[q] = e;
    out << json{{"event_id", t.event_id},
                {"x_mm", t.position.x},
                {"y_mm", t.position.y},
                {"e_tot_ev", t.e_tot},
                {"arrival_time", t.arrival_time},
                {"edep_ev", edep}}
               .dump()
        << '\n';
  }
}

std::vector<TruthRecord> read_truth_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open truth file " + path);
  std::string line;
  if (!std::getline(in, line)) throw SchemaError("truth file has no header");
  std::vector<TruthRecord> out;
  try {
    parse_header(json::parse(line), "qpburst-truth");
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      const auto j = json::parse(line);
      TruthRecord t;
      t.event_id = j.at("event_id").get<std::uint64_t>();
      t.position = {j.at("x_mm").get<double>(), j.at("y_mm").get<double>()};
      t.e_tot = j.at("e_tot_ev").get<double>();
      t.arrival_time = j.at("arrival_time").get<double>();
      for (const auto& [q, e] : j.at("edep_ev").items()) t.per_qubit_edep.emplace_back(q, e.get<double>());
      out.push_back(std::move(t));
    }
  } catch (const json::exception& e) {
    throw SchemaError(std::string("malformed truth file: ") + e.what());
  }
  return out;
}

void write_chain_dump(const std::string& path, const PosteriorResult& post) {
  auto out = open_out(path, true);
  out.write("QPCHAIN1", 8);
  std::uint64_t rows = 0;
  for (const auto& chain : post.draws) rows += chain.empty() ? 0 : chain.front().size();
  put_u32(out, static_cast<std::uint32_t>(post.names.size()));
  put_u64(out, rows);
  for (const auto& n : post.names) {
    put_u32(out, static_cast<std::uint32_t>(n.size()));
    out.write(n.data(), static_cast<std::streamsize>(n.size()));
  }
  for (std::size_t k = 0; k < post.names.size(); ++k)
    for (const auto& chain : post.draws)
      for (double v : chain[k]) put_u64(out, std::bit_cast<std::uint64_t>(v));
  if (!out) throw IoError("failed writing " + path);
}

ChainDump read_chain_dump(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open chain dump " + path);
  char magic[8] = {};
  in.read(magic, 8);
  if (std::memcmp(magic, "QPCHAIN1", 8) != 0) throw SchemaError("not a chain dump: " + path);
  ChainDump d;
  const auto n_par = get_uint(in, 4);
  const auto rows = get_uint(in, 8);
  for (std::uint64_t k = 0; k < n_par; ++k) {
    const auto len = get_uint(in, 4);
    std::string name(len, '\0');
    if (!in.read(name.data(), static_cast<std::streamsize>(len))) throw SchemaError("truncated chain dump");
    d.names.push_back(name);
  }
  d.columns.assign(n_par, std::vector<double>(rows));
  for (auto& col : d.columns)
    for (auto& v : col) v = std::bit_cast<double>(get_uint(in, 8));
  return d;
}

}  // namespace qpburst
