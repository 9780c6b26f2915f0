#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <string_view>

namespace rae {

// Flat key=value configuration. Every key has a default; unknown keys are
// rejected. '#' starts a comment line.
class RunConfig {
 public:
  RunConfig();

  static RunConfig from_file(const std::filesystem::path& path);

  void parse(std::istream& is, std::string_view source);
  // "key=value"
  void apply_override(std::string_view assignment);
  void set(std::string_view key, std::string value);
  // RAE_SEED overrides `seed` when set.
  void apply_environment();

  const std::string& get(std::string_view key) const;
  std::string path(std::string_view key) const;  // throws if empty
  double real(std::string_view key) const;
  std::uint64_t count(std::string_view key) const;
  bool flag(std::string_view key) const;

  // Sorted key=value lines.
  void write(std::ostream& os) const;
  void save(const std::filesystem::path& path) const;

  const std::map<std::string, std::string, std::less<>>& values() const { return values_; }

 private:
  std::map<std::string, std::string, std::less<>> values_;
};

}  // namespace rae
