#pragma once

#include "region_styler/error.hpp"

#include <nlohmann/json.hpp>

#include <set>
#include <string>
#include <type_traits>

namespace region_styler::detail {

/// Strict reader for JSON objects: typed field access with path-qualified
/// ValidationErrors, and `finish()` rejects any key that was never read.
class JsonFields {
public:
    JsonFields(const nlohmann::json& object, std::string path) : object_(object), path_(std::move(path)) {
        if (!object_.is_object()) {
            throw ValidationError(path_.empty() ? "$" : path_, "expected a JSON object");
        }
    }

    std::string field_path(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

    bool has(const std::string& key) const { return object_.contains(key); }

    /// Reads `key` into `out` when present; leaves `out` untouched otherwise.
    template <class T>
    bool read(const std::string& key, T& out) {
        seen_.insert(key);
        const auto it = object_.find(key);
        if (it == object_.end()) {
            return false;
        }
        out = convert<T>(*it, field_path(key));
        return true;
    }

    template <class T>
    T required(const std::string& key) {
        seen_.insert(key);
        const auto it = object_.find(key);
        if (it == object_.end()) {
            throw ValidationError(field_path(key), "missing required field");
        }
        return convert<T>(*it, field_path(key));
    }

    const nlohmann::json* child(const std::string& key) {
        seen_.insert(key);
        const auto it = object_.find(key);
        return it == object_.end() ? nullptr : &*it;
    }

    void finish() const {
        for (const auto& item : object_.items()) {
            if (!seen_.contains(item.key())) {
                throw ValidationError(field_path(item.key()), "unknown field");
            }
        }
    }

    template <class T>
    static T convert(const nlohmann::json& value, const std::string& path) {
        if constexpr (std::is_same_v<T, bool>) {
            if (!value.is_boolean()) throw ValidationError(path, "expected a boolean");
            return value.get<bool>();
        } else if constexpr (std::is_integral_v<T>) {
            if (!value.is_number_integer()) throw ValidationError(path, "expected an integer");
            if constexpr (std::is_unsigned_v<T>) {
                if (value.is_number_unsigned()) return value.get<T>();
                if (value.get<long long>() < 0) throw ValidationError(path, "must be non-negative");
            }
            return value.get<T>();
        } else if constexpr (std::is_floating_point_v<T>) {
            if (!value.is_number()) throw ValidationError(path, "expected a number");
            return value.get<T>();
        } else if constexpr (std::is_same_v<T, std::string>) {
            if (!value.is_string()) throw ValidationError(path, "expected a string");
            return value.get<std::string>();
        } else {
            return value.get<T>();
        }
    }

private:
    const nlohmann::json& object_;
    std::string path_;
    std::set<std::string> seen_;
};

}  // namespace region_styler::detail
