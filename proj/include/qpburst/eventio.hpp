#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "qpburst/mcmc.hpp"
#include "qpburst/readout.hpp"
#include "qpburst/waveform.hpp"

namespace qpburst {

struct EventFileHeader {
  int schema_version = 0;
  std::string config_hash;
  std::string tool_version;
  std::size_t n_events = 0;
};

struct EventFile {
  EventFileHeader header;
  std::vector<EventRecord> events;
};

// JSON-lines: a header line, then one record per trigger.
void write_events_jsonl(const std::string& path, const EventFile& file);
// Same content as length-prefixed CBOR records behind an 8-byte magic.
void write_events_binary(const std::string& path, const EventFile& file);
// Detects the format from the first bytes.
EventFile read_events(const std::string& path);

struct TruthRecord {
  std::uint64_t event_id = 0;
  ChipPoint position;
  double e_tot = 0.0;
  double arrival_time = 0.0;
  std::vector<std::pair<std::string, double>> per_qubit_edep;
};

void write_truth_jsonl(const std::string& path, const EventFileHeader& header,
                       const std::vector<TruthRecord>& truth);
std::vector<TruthRecord> read_truth_jsonl(const std::string& path);

// Columnar chain dump: "QPCHAIN1", u32 parameter count, u64 row count,
// parameter names as u32 length + bytes, then one little-endian f64 column
// per parameter (chains concatenated).
void write_chain_dump(const std::string& path, const PosteriorResult& posterior);

struct ChainDump {
  std::vector<std::string> names;
  std::vector<std::vector<double>> columns;
};
ChainDump read_chain_dump(const std::string& path);

}  // namespace qpburst
