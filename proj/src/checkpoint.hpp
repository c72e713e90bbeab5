#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "tensor.hpp"

namespace ef {

// Owns a model's named parameters. Registration order is fixed by the
// builder, so seeded initialization is reproducible.
class ParameterStore {
 public:
  Parameter& add(const std::string& name, Shape shape);
  Parameter& at(const std::string& name);
  const Parameter& at(const std::string& name) const;
  bool contains(const std::string& name) const;
  std::vector<Parameter*> all();
  std::vector<const Parameter*> all() const;
  std::size_t total_size() const;

 private:
  std::vector<std::unique_ptr<Parameter>> owned_;
  std::unordered_map<std::string, Parameter*> index_;
};

// FNV-1a, used to fingerprint configs and data files.
std::uint64_t fnv1a(const std::string& bytes);

// Versioned parameter container: header (magic, version, config digest)
// followed by named blocks of little-endian 64-bit floats. Loading demands
// exact name and shape agreement with the live store.
void save_checkpoint(const std::string& path, const ParameterStore& store,
                     std::uint64_t config_digest);
void load_checkpoint(const std::string& path, ParameterStore& store,
                     std::uint64_t expected_config_digest);

}  // namespace ef
