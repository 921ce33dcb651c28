// Copyright (c) The flowopt Contributors
// SPDX-License-Identifier: Apache-2.0

//! Static analysis of record-processing UDFs in dataflow programs.
//!
//! Each UDF is analysed for the fields it reads, the fields whose values may
//! differ between input and output, and how many records it emits per call.
//! Those properties decide which adjacent operators of a plan can be swapped
//! without changing the plan's result; a reference interpreter checks the
//! decisions on concrete data.

pub mod analysis;
pub mod cfg;
pub mod interp;
pub mod plan;
pub mod reorder;
pub mod udf_ir;
