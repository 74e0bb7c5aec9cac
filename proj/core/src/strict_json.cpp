#include "flowmill/strict_json.hpp"

#include "flowmill/errors.hpp"

#include <string>
#include <utility>
#include <vector>

namespace flowmill {

namespace {

// DOM-building SAX handler that fails on duplicate object keys.
class StrictBuilder {
 public:
  using number_integer_t = Json::number_integer_t;
  using number_unsigned_t = Json::number_unsigned_t;
  using number_float_t = Json::number_float_t;
  using string_t = Json::string_t;
  using binary_t = Json::binary_t;

  Json root;
  std::string error;

  bool null() { return emit(Json(nullptr)); }
  bool boolean(bool v) { return emit(Json(v)); }
  bool number_integer(number_integer_t v) { return emit(Json(v)); }
  bool number_unsigned(number_unsigned_t v) { return emit(Json(v)); }
  bool number_float(number_float_t v, const string_t&) { return emit(Json(v)); }
  bool string(string_t& v) { return emit(Json(std::move(v))); }
  bool binary(binary_t& v) { return emit(Json(std::move(v))); }

  bool start_object(std::size_t) {
    stack_.push_back(Frame{Json::object(), {}, false});
    return true;
  }

  bool key(string_t& k) {
    Frame& f = stack_.back();
    if (f.value.contains(k)) {
      error = "duplicate object key \"" + k + "\"";
      return false;
    }
    f.pending_key = std::move(k);
    f.has_key = true;
    return true;
  }

  bool end_object() { return close(); }

  bool start_array(std::size_t) {
    stack_.push_back(Frame{Json::array(), {}, false});
    return true;
  }

  bool end_array() { return close(); }

  bool parse_error(std::size_t pos, const std::string&,
                   const nlohmann::detail::exception& ex) {
    if (error.empty()) {
      error = std::string(ex.what()) + " at byte " + std::to_string(pos);
    }
    return false;
  }

 private:
  struct Frame {
    Json value;
    std::string pending_key;
    bool has_key;
  };

  std::vector<Frame> stack_;

  bool emit(Json v) {
    if (stack_.empty()) {
      root = std::move(v);
      return true;
    }
    Frame& f = stack_.back();
    if (f.value.is_object()) {
      f.value[f.pending_key] = std::move(v);
      f.has_key = false;
    } else {
      f.value.push_back(std::move(v));
    }
    return true;
  }

  bool close() {
    Json done = std::move(stack_.back().value);
    stack_.pop_back();
    return emit(std::move(done));
  }
};

}  // namespace

Json strict_parse_json(std::string_view text) {
  StrictBuilder builder;
  bool ok = Json::sax_parse(text, &builder);
  if (!ok) {
    raise(Errc::SyntaxError,
          builder.error.empty() ? "malformed JSON" : builder.error);
  }
  return std::move(builder.root);
}

}  // namespace flowmill
