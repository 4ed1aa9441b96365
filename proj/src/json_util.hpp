#pragma once

// internal helpers shared by the .cpp files; not installed

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "json.hpp"

#include "mta/errors.hpp"

namespace mta {

using ojson = nlohmann::ordered_json;

inline std::string read_text_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw MissingFileError("missing file: " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline void write_text_file(const std::filesystem::path& path,
                            const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw MissingFileError("cannot open for write: " + path.string());
    out << text;
    if (!out) throw IntegrityError("short write: " + path.string());
}

inline ojson parse_json(const std::string& text, const std::string& what) {
    ojson j = ojson::parse(text, nullptr, false);
    if (j.is_discarded())
        throw DataError("malformed JSON in " + what);
    return j;
}

inline ojson read_json_file(const std::filesystem::path& path) {
    return parse_json(read_text_file(path), path.string());
}

inline void check_version(const ojson& j, const std::string& what) {
    if (!j.contains("version") || !j["version"].is_number_integer())
        throw DataError(what + ": missing version field");
    if (j["version"].get<int>() != 1)
        throw FormatVersionError(what + ": unsupported version " +
                                 std::to_string(j["version"].get<int>()));
}

} // namespace mta
