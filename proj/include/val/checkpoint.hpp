#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "val/tensor.hpp"

namespace val::data {

// Named-section checkpoint container ("VALC"). Tensor payloads are raw f64
// little-endian, so save/load round-trips are bit-exact and resuming a run
// continues identically to one that never stopped.
class CheckpointWriter {
public:
    void add_tensor(const std::string& name, const Tensor& t);
    void add_vector(const std::string& name, const std::vector<double>& v);
    void add_u64(const std::string& name, std::uint64_t v);
    void add_f64(const std::string& name, double v);
    void add_string(const std::string& name, const std::string& v);
    void write(const std::string& path) const;

private:
    struct Section {
        std::uint8_t kind;
        std::vector<int> dims;
        std::vector<std::uint8_t> payload;
    };
    std::map<std::string, Section> sections_;
};

class CheckpointReader {
public:
    explicit CheckpointReader(const std::string& path);

    bool has(const std::string& name) const;
    // Shape must match the destination tensor (architecture gate).
    void read_tensor(const std::string& name, Tensor& t) const;
    void read_vector(const std::string& name, std::vector<double>& v) const;
    std::uint64_t u64(const std::string& name) const;
    double f64(const std::string& name) const;
    std::string str(const std::string& name) const;

private:
    struct Section {
        std::uint8_t kind;
        std::vector<int> dims;
        std::vector<std::uint8_t> payload;
    };
    const Section& section(const std::string& name, std::uint8_t kind) const;
    std::map<std::string, Section> sections_;
};

}  // namespace val::data
