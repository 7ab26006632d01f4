#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "misshift/datagen.hpp"
#include "misshift/matrix.hpp"
#include "misshift/missingness.hpp"

namespace misshift {

// Versioned binary container: magic, format version, then named sections of
// fp64 matrices, byte matrices, or raw blobs. All payloads little-endian.
inline constexpr char kContainerMagic[4] = {'M', 'S', 'B', 'C'};
inline constexpr std::uint32_t kContainerVersion = 1;

class Container {
 public:
  void put_matrix(const std::string& name, const Matrix& m);
  void put_bytes(const std::string& name, std::string bytes);
  // 0/1 matrix stored one byte per cell.
  void put_bitmask(const std::string& name, const Matrix& m);

  bool has(const std::string& name) const;
  const Matrix& matrix(const std::string& name) const;
  Matrix bitmask(const std::string& name) const;
  const std::string& bytes(const std::string& name) const;

  std::string serialize() const;
  static Container deserialize(const std::string& buffer);

  void write_file(const std::string& path) const;
  static Container read_file(const std::string& path);

  std::uint64_t content_hash() const;

 private:
  struct Section {
    std::uint8_t kind = 0;  // 0 matrix, 1 byte matrix, 2 blob
    Matrix matrix;
    std::string bytes;
    std::size_t rows = 0, cols = 0;
  };
  std::map<std::string, Section> sections_;
};

// Dataset and masked-dataset persistence. Both write the binary container
// plus a human-readable "<path>.meta.json" sidecar carrying the seed and
// generating parameters.
void save_dataset(const Dataset& ds, const std::string& path);
Dataset load_dataset(const std::string& path);

void save_masked_dataset(const MaskedDataset& md, const std::string& path);
MaskedDataset load_masked_dataset(const std::string& path);

// Mechanism specs round-trip through the same JSON schema used by the
// experiment config, with every calibrated parameter included.
std::string mechanism_to_json(const MechanismSpec& spec);
MechanismSpec mechanism_from_json(const std::string& json_text);

// Gaussian/outcome parameter blocks shared by several container layouts.
void put_gaussian_params(Container& c, const GaussianParams& gp);
GaussianParams get_gaussian_params(const Container& c);
void put_outcome_params(Container& c, const OutcomeParams& op);
OutcomeParams get_outcome_params(const Container& c);

// Append-only result store with the fixed header
//   scenario,estimator,environment,rep,mse,bayes_mse,delta,seed,wall_ms,status
struct ResultRecord {
  std::string scenario;
  std::string estimator;
  std::string environment;
  long rep = 0;
  double mse = 0.0;
  std::optional<double> bayes_mse;
  std::uint64_t seed = 0;
  double wall_ms = 0.0;
  std::string status = "ok";
};

extern const char* kResultCsvHeader;

class ResultStore {
 public:
  explicit ResultStore(std::string path);
  void append(const ResultRecord& record);
  const std::string& path() const { return path_; }
  static std::vector<ResultRecord> read(const std::string& path);
  static std::string format_row(const ResultRecord& record);

 private:
  std::string path_;
};

std::string format_double(double v);

}  // namespace misshift
