// Copyright (c) 2026 moecalo contributors
// SPDX-License-Identifier: Apache-2.0
//
// Thin RAII shims over the HDF5 C API. Object timestamps are disabled on
// everything we create so identical inputs produce byte-identical files.
// libhdf5 is not thread-safe in its default build; all entry points here
// serialize on one process-wide mutex.

#pragma once

#include <hdf5.h>

#include <cstdint>
#include <mutex>
#include <span>
#include <string>
#include <vector>

#include "moecalo/errors.hpp"

namespace moecalo::h5 {

inline std::mutex& io_mutex() {
  static std::mutex m;
  return m;
}

namespace detail {

struct Handle {
  hid_t id = H5I_INVALID_HID;
  herr_t (*closer)(hid_t) = nullptr;

  Handle() = default;
  Handle(hid_t id_, herr_t (*closer_)(hid_t)) : id(id_), closer(closer_) {}
  Handle(const Handle&) = delete;
  Handle& operator=(const Handle&) = delete;
  Handle(Handle&& o) noexcept : id(o.id), closer(o.closer) { o.id = H5I_INVALID_HID; }
  ~Handle() {
    if (id >= 0 && closer) closer(id);
  }
  operator hid_t() const { return id; }
  bool ok() const { return id >= 0; }
};

inline Handle quiet_props() {
  // Silence HDF5's stderr spew; errors surface as exceptions instead.
  H5Eset_auto2(H5E_DEFAULT, nullptr, nullptr);
  return {};
}

}  // namespace detail

class File {
 public:
  static File create(const std::string& path) {
    std::lock_guard lock(io_mutex());
    detail::quiet_props();
    hid_t id = H5Fcreate(path.c_str(), H5F_ACC_TRUNC, H5P_DEFAULT, H5P_DEFAULT);
    if (id < 0) throw IoError("cannot create file: " + path);
    return File(id, path);
  }

  static File open_readonly(const std::string& path) {
    std::lock_guard lock(io_mutex());
    detail::quiet_props();
    hid_t id = H5Fopen(path.c_str(), H5F_ACC_RDONLY, H5P_DEFAULT);
    if (id < 0) throw IoError("cannot open file: " + path);
    return File(id, path);
  }

  ~File() { close(); }
  File(const File&) = delete;
  File& operator=(const File&) = delete;
  File(File&& o) noexcept : id_(o.id_), path_(std::move(o.path_)) {
    o.id_ = H5I_INVALID_HID;
  }

  void close() {
    if (id_ >= 0) {
      std::lock_guard lock(io_mutex());
      H5Fclose(id_);
      id_ = H5I_INVALID_HID;
    }
  }

  const std::string& path() const { return path_; }

  // ---- datasets -----------------------------------------------------

  void write_f32(const std::string& name, std::span<const float> data,
                 std::span<const std::uint64_t> dims) {
    std::lock_guard lock(io_mutex());
    std::vector<hsize_t> hd(dims.begin(), dims.end());
    detail::Handle space{H5Screate_simple(static_cast<int>(hd.size()), hd.data(), nullptr), H5Sclose};
    detail::Handle dcpl{H5Pcreate(H5P_DATASET_CREATE), H5Pclose};
    H5Pset_obj_track_times(dcpl, false);
    detail::Handle lcpl{H5Pcreate(H5P_LINK_CREATE), H5Pclose};
    H5Pset_create_intermediate_group(lcpl, 1);
    detail::Handle dset{H5Dcreate2(id_, name.c_str(), H5T_IEEE_F32LE, space,
                                   lcpl, dcpl, H5P_DEFAULT),
                        H5Dclose};
    if (!dset.ok()) throw IoError("cannot create dataset " + name + " in " + path_);
    if (H5Dwrite(dset, H5T_NATIVE_FLOAT, H5S_ALL, H5S_ALL, H5P_DEFAULT, data.data()) < 0)
      throw IoError("write failed for dataset " + name + " in " + path_);
  }

  bool has_dataset(const std::string& name) const {
    std::lock_guard lock(io_mutex());
    return H5Lexists(id_, name.c_str(), H5P_DEFAULT) > 0;
  }

  std::vector<std::uint64_t> dataset_dims(const std::string& name) const {
    std::lock_guard lock(io_mutex());
    detail::Handle dset{H5Dopen2(id_, name.c_str(), H5P_DEFAULT), H5Dclose};
    if (!dset.ok()) throw SchemaError("missing dataset " + name + " in " + path_);
    detail::Handle space{H5Dget_space(dset), H5Sclose};
    const int rank = H5Sget_simple_extent_ndims(space);
    std::vector<hsize_t> hd(static_cast<std::size_t>(rank));
    H5Sget_simple_extent_dims(space, hd.data(), nullptr);
    return {hd.begin(), hd.end()};
  }

  std::vector<float> read_f32(const std::string& name) const {
    std::lock_guard lock(io_mutex());
    detail::Handle dset{H5Dopen2(id_, name.c_str(), H5P_DEFAULT), H5Dclose};
    if (!dset.ok()) throw SchemaError("missing dataset " + name + " in " + path_);
    detail::Handle space{H5Dget_space(dset), H5Sclose};
    const hssize_t n = H5Sget_simple_extent_npoints(space);
    std::vector<float> out(static_cast<std::size_t>(n));
    if (H5Dread(dset, H5T_NATIVE_FLOAT, H5S_ALL, H5S_ALL, H5P_DEFAULT, out.data()) < 0)
      throw IoError("read failed for dataset " + name + " in " + path_);
    return out;
  }

  // ---- root attributes ----------------------------------------------

  void write_attr(const std::string& name, const std::string& value) {
    std::lock_guard lock(io_mutex());
    detail::Handle atype{H5Tcopy(H5T_C_S1), H5Tclose};
    H5Tset_size(atype, value.size() + 1);
    H5Tset_strpad(atype, H5T_STR_NULLTERM);
    detail::Handle aspace{H5Screate(H5S_SCALAR), H5Sclose};
    detail::Handle attr{H5Acreate2(id_, name.c_str(), atype, aspace, H5P_DEFAULT,
                                   H5P_DEFAULT),
                        H5Aclose};
    if (!attr.ok() || H5Awrite(attr, atype, value.c_str()) < 0)
      throw IoError("cannot write attribute " + name + " in " + path_);
  }

  void write_attr(const std::string& name, std::int64_t value) {
    std::lock_guard lock(io_mutex());
    detail::Handle aspace{H5Screate(H5S_SCALAR), H5Sclose};
    detail::Handle attr{H5Acreate2(id_, name.c_str(), H5T_STD_I64LE, aspace,
                                   H5P_DEFAULT, H5P_DEFAULT),
                        H5Aclose};
    if (!attr.ok() || H5Awrite(attr, H5T_NATIVE_INT64, &value) < 0)
      throw IoError("cannot write attribute " + name + " in " + path_);
  }

  void write_attr(const std::string& name, double value) {
    std::lock_guard lock(io_mutex());
    detail::Handle aspace{H5Screate(H5S_SCALAR), H5Sclose};
    detail::Handle attr{H5Acreate2(id_, name.c_str(), H5T_IEEE_F64LE, aspace,
                                   H5P_DEFAULT, H5P_DEFAULT),
                        H5Aclose};
    if (!attr.ok() || H5Awrite(attr, H5T_NATIVE_DOUBLE, &value) < 0)
      throw IoError("cannot write attribute " + name + " in " + path_);
  }

  bool has_attr(const std::string& name) const {
    std::lock_guard lock(io_mutex());
    return H5Aexists(id_, name.c_str()) > 0;
  }

  std::string read_attr_string(const std::string& name) const {
    std::lock_guard lock(io_mutex());
    detail::Handle attr{H5Aopen(id_, name.c_str(), H5P_DEFAULT), H5Aclose};
    if (!attr.ok()) throw SchemaError("missing attribute " + name + " in " + path_);
    detail::Handle atype{H5Aget_type(attr), H5Tclose};
    const std::size_t sz = H5Tget_size(atype);
    std::vector<char> buf(sz + 1, '\0');
    if (H5Aread(attr, atype, buf.data()) < 0)
      throw IoError("cannot read attribute " + name + " in " + path_);
    return std::string(buf.data());
  }

  std::int64_t read_attr_i64(const std::string& name) const {
    std::lock_guard lock(io_mutex());
    detail::Handle attr{H5Aopen(id_, name.c_str(), H5P_DEFAULT), H5Aclose};
    if (!attr.ok()) throw SchemaError("missing attribute " + name + " in " + path_);
    std::int64_t v = 0;
    if (H5Aread(attr, H5T_NATIVE_INT64, &v) < 0)
      throw IoError("cannot read attribute " + name + " in " + path_);
    return v;
  }

  double read_attr_f64(const std::string& name) const {
    std::lock_guard lock(io_mutex());
    detail::Handle attr{H5Aopen(id_, name.c_str(), H5P_DEFAULT), H5Aclose};
    if (!attr.ok()) throw SchemaError("missing attribute " + name + " in " + path_);
    double v = 0;
    if (H5Aread(attr, H5T_NATIVE_DOUBLE, &v) < 0)
      throw IoError("cannot read attribute " + name + " in " + path_);
    return v;
  }

  hid_t raw() const { return id_; }

 private:
  File(hid_t id, std::string path) : id_(id), path_(std::move(path)) {}
  hid_t id_ = H5I_INVALID_HID;
  std::string path_;
};

}  // namespace moecalo::h5
