use ssif::acceptance::AcceptanceError;
use ssif::data::DataError;
use ssif::eval::EvalError;
use ssif::model::ModelError;
use ssif::numerics::NumericsError;
use ssif::spatial::SpatialError;
use ssif::spectral::SpectralError;
use ssif::train::TrainError;

pub const USAGE: i32 = 1;
pub const DATA: i32 = 2;
pub const NUMERIC: i32 = 3;

fn numerics(_: &NumericsError) -> i32 {
    NUMERIC
}

fn spectral(e: &SpectralError) -> i32 {
    match e {
        SpectralError::InvalidInterval { .. }
        | SpectralError::EmptyMatrix
        | SpectralError::Config(_) => USAGE,
        SpectralError::DegenerateWeights | SpectralError::NonFinite(_) => NUMERIC,
        SpectralError::Numerics(n) => numerics(n),
    }
}

fn data(e: &DataError) -> i32 {
    match e {
        DataError::Format { .. } | DataError::Io { .. } => DATA,
        DataError::Argument(_) | DataError::InsufficientBands { .. } => USAGE,
        DataError::Spectral(s) => spectral(s),
    }
}

fn spatial(e: &SpatialError) -> i32 {
    match e {
        SpatialError::Config(_) => USAGE,
        SpatialError::Numerics(n) => numerics(n),
    }
}

fn model(e: &ModelError) -> i32 {
    match e {
        ModelError::Config(_) | ModelError::Argument(_) => USAGE,
        ModelError::Spatial(s) => spatial(s),
        ModelError::Spectral(s) => spectral(s),
        ModelError::Numerics(n) => numerics(n),
        ModelError::Data(d) => data(d),
    }
}

fn train(e: &TrainError) -> i32 {
    match e {
        TrainError::Config(_) | TrainError::Argument(_) => USAGE,
        TrainError::NonFinite { .. } => NUMERIC,
        TrainError::Model(m) => model(m),
        TrainError::Data(d) => data(d),
        TrainError::Numerics(n) => numerics(n),
    }
}

fn eval(e: &EvalError) -> i32 {
    match e {
        EvalError::Config(_) | EvalError::Argument(_) => USAGE,
        EvalError::Model(m) => model(m),
        EvalError::Data(d) => data(d),
        EvalError::Spectral(s) => spectral(s),
    }
}

fn acceptance(e: &AcceptanceError) -> i32 {
    match e {
        AcceptanceError::Train(t) => train(t),
        AcceptanceError::Eval(v) => eval(v),
        AcceptanceError::Model(m) => model(m),
        AcceptanceError::Data(d) => data(d),
        AcceptanceError::Numerics(n) => numerics(n),
        AcceptanceError::Spectral(s) => spectral(s),
    }
}

/// 1 for usage and config errors, 2 for data and file errors, 3 for numeric failures.
pub fn code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<TrainError>() {
            return train(e);
        }
        if let Some(e) = cause.downcast_ref::<EvalError>() {
            return eval(e);
        }
        if let Some(e) = cause.downcast_ref::<ModelError>() {
            return model(e);
        }
        if let Some(e) = cause.downcast_ref::<DataError>() {
            return data(e);
        }
        if let Some(e) = cause.downcast_ref::<SpectralError>() {
            return spectral(e);
        }
        if let Some(e) = cause.downcast_ref::<SpatialError>() {
            return spatial(e);
        }
        if let Some(e) = cause.downcast_ref::<NumericsError>() {
            return numerics(e);
        }
        if let Some(e) = cause.downcast_ref::<AcceptanceError>() {
            return acceptance(e);
        }
        if cause.downcast_ref::<serde_json::Error>().is_some() {
            return USAGE;
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return DATA;
        }
    }
    USAGE
}
