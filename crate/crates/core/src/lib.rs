pub mod tensor;
pub mod model;
pub mod evolve;
pub mod state;
pub mod environment;
pub mod observables;
pub mod oracle;
