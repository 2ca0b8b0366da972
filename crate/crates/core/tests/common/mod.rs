pub mod random_expr;
